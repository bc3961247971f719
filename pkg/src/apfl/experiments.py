"""Experiment runner: configuration, end-to-end runs, sweeps, and reports.

A run is: build (or load) a dataset, partition it across clients with
Dirichlet label skew, split each shard into local train/test, push raw rows
through the frozen extractor, execute the one-shot protocol, then score
every client's personalized model on its own local test set. Each run
always evaluates both the blended model ("dual") and the shared stream
alone ("primary", the blend weight forced to zero).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .client import local_accuracy
from .data import (
    LabeledDataset,
    PartitionSpec,
    dirichlet_partition,
    load_dataset_files,
    one_hot,
    stratified_split_indices,
    synthetic_dataset,
)
from .errors import ConfigError
from .features import Activation, IdentityExtractor, RandomLinearExtractor
from .protocol import Config, upload_frame_size
from .seeding import derive_seed
from .transport import (
    FederatedClient,
    FusionServer,
    RoundResult,
    parse_address,
    run_round,
)


@dataclass
class SyntheticSpec:
    # separation 0.45 puts the default task in the regime where the shared
    # stream is good but imperfect, so personalization has visible effect
    num_classes: int = 10
    input_dim: int = 64
    n_samples: int = 5000
    separation: float = 0.45
    noise: float = 1.0

    kind = "synthetic"

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dataclasses.asdict(self)}


@dataclass
class FileSpec:
    features: str
    labels: str

    kind = "file"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "features": self.features, "labels": self.labels}


@dataclass
class RunConfig:
    """Everything needed to reproduce one run bit-for-bit."""

    dataset: SyntheticSpec | FileSpec = field(default_factory=SyntheticSpec)
    extractor: str = "frozen-random-linear"  # or "identity"
    extractor_dim: int = 64  # output width of the frozen-random-linear extractor
    num_clients: int = 8
    alpha: float = 0.1
    min_samples_per_client: int = 2
    gamma: float = 0.01
    beta: float = 1.0
    lam: float = 0.3
    d_p: int = 512
    d_r: int = 256
    act_p: str = "relu"
    act_r: str = "relu"
    test_fraction: float = 0.3
    seed: int = 0
    transport: str = "simulated"
    address: str = "127.0.0.1:0"  # socket transport bind point, host:port
    output_dir: str | None = None

    def validate(self) -> None:
        if isinstance(self.dataset, FileSpec):
            for p in (self.dataset.features, self.dataset.labels):
                if not Path(p).exists():
                    raise ConfigError(f"dataset file does not exist: {p}")
        if self.extractor not in ("identity", "frozen-random-linear"):
            raise ConfigError(f"unknown extractor kind {self.extractor!r}")
        if self.extractor == "frozen-random-linear" and self.extractor_dim < 1:
            raise ConfigError("extractor_dim must be >= 1")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if self.d_p < 1 or self.d_r < 1:
            raise ConfigError("d_p and d_r must be >= 1")
        if not self.gamma > 0 or not self.beta > 0:
            raise ConfigError("gamma and beta must be > 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.transport not in ("simulated", "socket"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        try:
            parse_address(self.address)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        Activation.from_name(self.act_p)
        Activation.from_name(self.act_r)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dataset"] = self.dataset.to_dict()
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        ds = doc.pop("dataset", None)
        if ds is not None:
            kind = ds.get("kind", "synthetic")
            fields = {k: v for k, v in ds.items() if k != "kind"}
            if kind == "synthetic":
                doc["dataset"] = SyntheticSpec(**fields)
            elif kind == "file":
                doc["dataset"] = FileSpec(**fields)
            else:
                raise ConfigError(f"unknown dataset kind {kind!r}")
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)


@dataclass
class RunReport:
    """Per-client and aggregate accuracies plus traffic and timing accounting."""

    config: dict
    client_ids: list[int]
    n_train: list[int]
    n_test: list[int]
    dual_accuracy: list[float]
    primary_accuracy: list[float]
    mean_dual: float
    mean_primary: float
    weighted_dual: float
    weighted_primary: float
    transport_stats: dict
    upload_frame_bytes: int
    timings: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(out / "accuracy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["client_id", "n_train", "n_test", "dual_accuracy", "primary_accuracy"])
            for i, cid in enumerate(self.client_ids):
                w.writerow(
                    [
                        cid,
                        self.n_train[i],
                        self.n_test[i],
                        repr(self.dual_accuracy[i]),
                        repr(self.primary_accuracy[i]),
                    ]
                )


def _build_dataset(cfg: RunConfig) -> LabeledDataset:
    if isinstance(cfg.dataset, FileSpec):
        return load_dataset_files(cfg.dataset.features, cfg.dataset.labels)
    s = cfg.dataset
    return synthetic_dataset(
        num_classes=s.num_classes,
        input_dim=s.input_dim,
        n_samples=s.n_samples,
        separation=s.separation,
        noise=s.noise,
        seed=derive_seed(cfg.seed, "data"),
    )


def _build_extractor(cfg: RunConfig, input_dim: int):
    if cfg.extractor == "identity":
        return IdentityExtractor(input_dim)
    return RandomLinearExtractor(
        input_dim, cfg.extractor_dim, derive_seed(cfg.seed, "backbone")
    )


def _protocol_config(cfg: RunConfig, num_classes: int) -> Config:
    return Config(
        gamma=cfg.gamma,
        beta=cfg.beta,
        lam=cfg.lam,
        d_p=cfg.d_p,
        d_r=cfg.d_r,
        seed_p=derive_seed(cfg.seed, "head-primary"),
        seed_r=derive_seed(cfg.seed, "head-refine"),
        act_p=Activation.from_name(cfg.act_p),
        act_r=Activation.from_name(cfg.act_r),
        num_classes=num_classes,
        num_clients=cfg.num_clients,
    )


def run_experiment(cfg: RunConfig) -> RunReport:
    """Execute one full run and assemble its report.

    The report is a pure function of the config: every random stream is
    derived from the master seed, and the one-shot protocol fuses clients
    in a fixed order on both transports.
    """
    cfg.validate()
    timings: dict[str, float] = {}
    t_total = time.perf_counter()

    t0 = time.perf_counter()
    ds = _build_dataset(cfg)
    timings["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    spec = PartitionSpec(
        num_clients=cfg.num_clients,
        alpha=cfg.alpha,
        seed=derive_seed(cfg.seed, "partition"),
        min_samples_per_client=cfg.min_samples_per_client,
    )
    parts = dirichlet_partition(ds, spec)
    split_rng = np.random.default_rng(derive_seed(cfg.seed, "split"))
    train_rows, test_rows = [], []
    for shard in parts:
        tr, te = stratified_split_indices(
            ds.labels[shard], 1.0 - cfg.test_fraction, split_rng, singletons_to_train=True
        )
        train_rows.append(shard[tr])
        test_rows.append(shard[te])
    timings["partition"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    extractor = _build_extractor(cfg, ds.input_dim)
    backbone = extractor.extract(ds.features)
    timings["extract"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    proto_cfg = _protocol_config(cfg, ds.num_classes)
    clients = [
        FederatedClient(k, backbone[train_rows[k]], ds.labels[train_rows[k]], ds.num_classes)
        for k in range(cfg.num_clients)
    ]
    fusion_server = FusionServer(proto_cfg, expected_clients=range(cfg.num_clients))
    result: RoundResult = run_round(
        fusion_server, clients, transport=cfg.transport, address=cfg.address
    )
    timings["round"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dual_acc, primary_acc, n_test = [], [], []
    for k in range(cfg.num_clients):
        test_ds = LabeledDataset(
            backbone[test_rows[k]], ds.labels[test_rows[k]], ds.num_classes
        )
        model = result.models[k]
        dual_acc.append(local_accuracy(model, test_ds))
        primary_acc.append(local_accuracy(dataclasses.replace(model, lam=0.0), test_ds))
        n_test.append(test_ds.n_samples)
    timings["evaluate"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_total

    weights = np.asarray(n_test, dtype=np.float64)
    weights /= weights.sum()
    report = RunReport(
        config=cfg.to_dict(),
        client_ids=list(range(cfg.num_clients)),
        n_train=[int(r.size) for r in train_rows],
        n_test=n_test,
        dual_accuracy=dual_acc,
        primary_accuracy=primary_acc,
        mean_dual=float(np.mean(dual_acc)),
        mean_primary=float(np.mean(primary_acc)),
        weighted_dual=float(np.dot(weights, dual_acc)),
        weighted_primary=float(np.dot(weights, primary_acc)),
        transport_stats=result.stats.to_dict(),
        upload_frame_bytes=upload_frame_size(cfg.d_p, ds.num_classes),
        timings=timings,
    )
    if cfg.output_dir:
        report.write(cfg.output_dir)
    return report


SWEEPABLE = ("lambda", "gamma", "beta", "d_p", "d_r", "act_p", "act_r", "alpha")


def apply_sweep_value(cfg: RunConfig, param: str, value) -> RunConfig:
    """A copy of ``cfg`` with one swept parameter replaced."""
    if param not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter {param!r}; expected one of {SWEEPABLE}")
    out = dataclasses.replace(cfg)
    if param == "lambda":
        out.lam = float(value)
    elif param == "gamma":
        out.gamma = float(value)
    elif param == "beta":
        out.beta = float(value)
    elif param == "alpha":
        out.alpha = float(value)
    elif param in ("d_p", "d_r"):
        setattr(out, param, int(value))
    else:
        setattr(out, param, str(value))
    out.validate()
    return out


def parse_sweep_values(param: str, raw: str) -> list:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError("sweep needs at least one value")
    if param in ("d_p", "d_r"):
        return [int(p) for p in parts]
    if param in ("act_p", "act_r"):
        return parts
    return [float(p) for p in parts]


def run_sweep(cfg: RunConfig, param: str, values: list) -> list[RunReport]:
    """One run per value with shared seeds; writes sweep.csv and plots."""
    reports = []
    for v in values:
        sub = apply_sweep_value(cfg, param, v)
        sub.output_dir = None  # per-value artifacts are folded into the sweep table
        reports.append(run_experiment(sub))
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                [param, "mean_dual", "mean_primary", "weighted_dual", "weighted_primary"]
            )
            for v, rep in zip(values, reports):
                w.writerow(
                    [
                        v,
                        repr(rep.mean_dual),
                        repr(rep.mean_primary),
                        repr(rep.weighted_dual),
                        repr(rep.weighted_primary),
                    ]
                )
        _plot_sweep(out, param, values, reports)
    return reports


def _plot_sweep(out: Path, param: str, values: list, reports: list[RunReport]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics = {
        "mean_accuracy": [("dual", [r.mean_dual for r in reports]),
                          ("primary", [r.mean_primary for r in reports])],
        "weighted_accuracy": [("dual", [r.weighted_dual for r in reports]),
                              ("primary", [r.weighted_primary for r in reports])],
    }
    categorical = isinstance(values[0], str)
    x = list(range(len(values))) if categorical else values
    for metric, series in metrics.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, ys in series:
            ax.plot(x, ys, marker="o", label=label)
        if categorical:
            ax.set_xticks(x)
            ax.set_xticklabels([str(v) for v in values])
        ax.set_xlabel(param)
        ax.set_ylabel(metric.replace("_", " "))
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / f"sweep_{param}_{metric}.png", dpi=120)
        plt.close(fig)
