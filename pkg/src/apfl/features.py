"""Frozen feature extraction and the two random-projection heads.

The feature pipeline is: raw inputs -> frozen extractor (backbone stand-in)
-> seeded random projection -> elementwise nonlinearity. Everything here is
a pure function of its seed, so independently constructed parties agree
bit-exactly on the feature spaces. That bit-exact agreement is what makes
cross-client aggregation of gram matrices meaningful at all.

Also defines the binary file formats for precomputed feature matrices
(magic ``APFLMAT1``) and label vectors (magic ``APFLLAB1``).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf, expit

from .errors import FileFormatError, ShapeError
from .linalg import as_matrix

FEATURE_MAGIC = b"APFLMAT1"
LABEL_MAGIC = b"APFLLAB1"


class Activation(enum.IntEnum):
    """Elementwise nonlinearities available to the projection heads.

    Integer values double as the on-wire codes, so the order is frozen.
    """

    RELU = 0
    LEAKY_RELU = 1
    TANH = 2
    SIGMOID = 3
    HARDSWISH = 4
    GELU = 5
    ELU = 6
    SOFTPLUS = 7

    @classmethod
    def from_name(cls, name: str) -> "Activation":
        key = name.strip().lower().replace("-", "_")
        try:
            return cls[key.upper()]
        except KeyError:
            valid = ", ".join(a.name.lower() for a in cls)
            raise ValueError(f"unknown activation {name!r}; expected one of: {valid}") from None

    @property
    def canonical_name(self) -> str:
        return self.name.lower()

    def apply(self, x: np.ndarray) -> np.ndarray:
        return _ACTIVATION_FUNCS[self](x)


def _relu(x):
    return np.maximum(x, 0.0)


def _leaky_relu(x):
    return np.where(x >= 0.0, x, 0.01 * x)


def _sigmoid(x):
    return expit(x)


def _hardswish(x):
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _elu(x):
    # expm1 on the clamped negative branch avoids overflow warnings from
    # np.where evaluating exp on large positives.
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _softplus(x):
    return np.logaddexp(0.0, x)


_ACTIVATION_FUNCS = {
    Activation.RELU: _relu,
    Activation.LEAKY_RELU: _leaky_relu,
    Activation.TANH: np.tanh,
    Activation.SIGMOID: _sigmoid,
    Activation.HARDSWISH: _hardswish,
    Activation.GELU: _gelu,
    Activation.ELU: _elu,
    Activation.SOFTPLUS: _softplus,
}


@dataclass(frozen=True)
class ProjectionHead:
    """A seeded random projection plus nonlinearity defining one feature space.

    The closed-form objectives carry no intercept, so no bias is added by
    default; ``append_one`` exists as an ablation knob that appends a
    constant-1 feature after the activation.
    """

    proj: np.ndarray  # (in_dim, d), frozen
    activation: Activation
    seed: int
    append_one: bool = False

    @property
    def in_dim(self) -> int:
        return self.proj.shape[0]

    @property
    def d(self) -> int:
        return self.proj.shape[1]


def make_head(
    seed: int, in_dim: int, d: int, act: Activation, append_one: bool = False
) -> ProjectionHead:
    """Build a projection head whose matrix is a pure function of ``seed``.

    Entries are i.i.d. Gaussian with mean 0 and standard deviation
    1/sqrt(in_dim) (variance-preserving scaling), drawn from a PCG64
    generator so that the same seed yields bit-identical heads on any
    machine.
    """
    if in_dim < 1 or d < 1:
        raise ValueError(f"head dimensions must be >= 1, got in_dim={in_dim}, d={d}")
    if seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed}")
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((in_dim, d)) / np.sqrt(in_dim)
    proj.setflags(write=False)
    return ProjectionHead(proj=proj, activation=act, seed=seed, append_one=append_one)


def activate(head: ProjectionHead, backbone_out) -> np.ndarray:
    """Project and squash backbone outputs into the head's feature space."""
    b = as_matrix(backbone_out, "backbone_out")
    if b.shape[1] != head.in_dim:
        raise ShapeError(
            f"backbone output has {b.shape[1]} columns, head expects {head.in_dim}"
        )
    out = head.activation.apply(b @ head.proj)
    if head.append_one:
        out = np.hstack([out, np.ones((out.shape[0], 1))])
    return out


# ---------------------------------------------------------------------------
# Feature extractors (frozen backbone stand-ins)
# ---------------------------------------------------------------------------


class IdentityExtractor:
    """Passes raw inputs through unchanged; output_dim equals input_dim."""

    kind = "identity"

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        self.input_dim = input_dim
        self.output_dim = input_dim

    def extract(self, x) -> np.ndarray:
        x = as_matrix(x, "x")
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim} columns, got {x.shape[1]}")
        return x


class RandomLinearExtractor:
    """A frozen seed-fixed linear map standing in for a pretrained backbone."""

    kind = "frozen-random-linear"

    def __init__(self, input_dim: int, output_dim: int, seed: int):
        if input_dim < 1 or output_dim < 1:
            raise ValueError("extractor dimensions must be >= 1")
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weight = rng.standard_normal((input_dim, output_dim)) / np.sqrt(input_dim)
        self.weight.setflags(write=False)

    def extract(self, x) -> np.ndarray:
        x = as_matrix(x, "x")
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"expected {self.input_dim} columns, got {x.shape[1]}")
        return x @ self.weight


class FileBackedExtractor:
    """Serves precomputed embedding rows; inputs carry row indices.

    The single input column holds integer row indices into the loaded
    matrix, so real foundation-model embeddings can be dropped in without
    running any model here.
    """

    kind = "file-backed"

    def __init__(self, rows: np.ndarray):
        self.rows = as_matrix(rows, "rows")
        self.input_dim = 1
        self.output_dim = self.rows.shape[1]

    @classmethod
    def from_file(cls, path) -> "FileBackedExtractor":
        return cls(read_feature_file(path))

    def extract(self, x) -> np.ndarray:
        x = as_matrix(x, "x")
        if x.shape[1] != 1:
            raise ShapeError(f"index input must have one column, got {x.shape[1]}")
        idx = x[:, 0]
        if not np.array_equal(idx, np.floor(idx)):
            raise ValueError("file-backed extractor inputs must be integral row indices")
        idx = idx.astype(np.int64)
        if idx.min() < 0 or idx.max() >= self.rows.shape[0]:
            raise IndexError(
                f"row index out of range [0, {self.rows.shape[0]}) in file-backed extractor"
            )
        return self.rows[idx]


# ---------------------------------------------------------------------------
# Binary file formats for precomputed features and labels
# ---------------------------------------------------------------------------


def write_feature_file(path, features) -> None:
    """Write a float64 matrix: magic, u32 rows, u32 cols, row-major LE doubles."""
    m = as_matrix(features, "features")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_feature_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != FEATURE_MAGIC:
        raise FileFormatError(f"{path}: missing feature-file magic {FEATURE_MAGIC!r}")
    rows, cols = struct.unpack_from("<II", data, 8)
    expected = 16 + 8 * rows * cols
    if len(data) != expected:
        raise FileFormatError(
            f"{path}: expected {expected} bytes for {rows}x{cols} doubles, got {len(data)}"
        )
    if rows < 1 or cols < 1:
        raise FileFormatError(f"{path}: degenerate shape {rows}x{cols}")
    out = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=16)
    return out.astype(np.float64).reshape(rows, cols)


def write_label_file(path, labels, num_classes: int) -> None:
    """Write class indices: magic, u32 rows, u32 classes, one u32 per row."""
    lab = np.asarray(labels, dtype=np.int64).ravel()
    if lab.size < 1:
        raise ValueError("labels must be non-empty")
    if num_classes < 1 or lab.min() < 0 or lab.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<II", lab.size, num_classes))
        fh.write(lab.astype("<u4").tobytes())


def read_label_file(path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != LABEL_MAGIC:
        raise FileFormatError(f"{path}: missing label-file magic {LABEL_MAGIC!r}")
    rows, num_classes = struct.unpack_from("<II", data, 8)
    expected = 16 + 4 * rows
    if len(data) != expected:
        raise FileFormatError(
            f"{path}: expected {expected} bytes for {rows} labels, got {len(data)}"
        )
    if rows < 1 or num_classes < 1:
        raise FileFormatError(f"{path}: degenerate label file ({rows} rows, {num_classes} classes)")
    labels = np.frombuffer(data, dtype="<u4", count=rows, offset=16).astype(np.int64)
    if labels.max() >= num_classes:
        raise FileFormatError(f"{path}: label {labels.max()} outside [0, {num_classes})")
    return labels, int(num_classes)
