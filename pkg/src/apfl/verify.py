"""Randomized verification suites for the closed-form training guarantees.

Four suites check, against brute-force oracles, that:

  1. the fused global primary stream equals centralized ridge regression on
     the pooled data (centralized equivalence);
  2. the fusion result is invariant to client arrival order;
  3. a client's final model pair depends only on the pooled data and its own
     shard, not on how the rest is distributed (heterogeneity invariance);
  4. the refinement solution satisfies its normal equations (stationarity).

Each suite reports the maximum observed relative error and the seed of the
worst instance, so failures are reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .client import compute_local_primary, compute_refinement
from .data import one_hot
from .features import Activation, activate, make_head
from .linalg import symmetrize
from .server import centralized_oracle, finalize, fuse_all

EQUIVALENCE_TOL = 1e-8
STATIONARITY_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    tolerance: float
    instances: int
    worst_seed: int
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = (
            f"{self.name}: max rel err {self.max_rel_err:.3e} "
            f"(tol {self.tolerance:.0e}, {self.instances} instances, "
            f"{self.elapsed_s:.2f}s) {status}"
        )
        if not self.passed:
            line += f" [worst instance seed {self.worst_seed}]"
        return line


@dataclass
class VerifyReport:
    suites: list[SuiteResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    denom = np.linalg.norm(want)
    if denom == 0.0:
        return float(np.linalg.norm(got))
    return float(np.linalg.norm(got - want) / denom)


def _random_instance(seed: int, k: int, d_p: int, c: int, max_total_n: int = 2000):
    """Random per-client feature/label blocks plus a regularizer."""
    rng = np.random.default_rng(seed)
    gamma = float(rng.choice([0.01, 0.1, 1.0]))
    base = max_total_n // (2 * k)
    sizes = rng.integers(max(2, base // 2), max(3, base), size=k)
    phis, ys = [], []
    for n in sizes:
        phis.append(rng.standard_normal((int(n), d_p)))
        ys.append(one_hot(rng.integers(0, c, size=int(n)), c))
    return phis, ys, gamma


def suite_centralized_equivalence(
    seed: int = 0,
    instances: int = 20,
    overcount_correction: bool = True,
) -> SuiteResult:
    """Fused result vs. pooled ridge oracle over randomized instances.

    ``overcount_correction=False`` injects a deliberate fault into the
    finalization step; the suite is expected to fail then, which proves it
    can detect real deviations.
    """
    ks = [2, 5, 8, 16]
    dims = [16, 64]
    t0 = time.perf_counter()
    max_err, worst = 0.0, seed
    for i in range(instances):
        inst_seed = seed * 100003 + i
        k = ks[i % len(ks)]
        d_p = dims[(i // len(ks)) % len(dims)]
        phis, ys, gamma = _random_instance(inst_seed, k, d_p, c=10)
        knowledges = [
            compute_local_primary(p, y, gamma, client_id=j)
            for j, (p, y) in enumerate(zip(phis, ys))
        ]
        state = fuse_all(knowledges, gamma)
        got = finalize(state, k, overcount_correction=overcount_correction)
        want = centralized_oracle(np.vstack(phis), np.vstack(ys), gamma)
        err = _rel_err(got, want)
        if err > max_err:
            max_err, worst = err, inst_seed
    return SuiteResult(
        name="centralized equivalence",
        max_rel_err=max_err,
        tolerance=EQUIVALENCE_TOL,
        instances=instances,
        worst_seed=worst,
        elapsed_s=time.perf_counter() - t0,
    )


def suite_order_invariance(
    seed: int = 0, instances: int = 4, permutations: int = 10
) -> SuiteResult:
    """Finalized outputs across random fusion orders must agree pairwise."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    max_err, worst = 0.0, seed
    ks = [5, 8, 5, 8]
    dims = [16, 16, 64, 64]
    for i in range(instances):
        inst_seed = seed * 100019 + i
        k = ks[i % len(ks)]
        d_p = dims[i % len(dims)]
        phis, ys, gamma = _random_instance(inst_seed, k, d_p, c=10)
        knowledges = [
            compute_local_primary(p, y, gamma, client_id=j)
            for j, (p, y) in enumerate(zip(phis, ys))
        ]
        outputs = []
        for _ in range(permutations):
            order = rng.permutation(k)
            state = fuse_all([knowledges[j] for j in order], gamma)
            outputs.append(finalize(state, k))
        for a in range(len(outputs)):
            for b in range(a + 1, len(outputs)):
                err = _rel_err(outputs[a], outputs[b])
                if err > max_err:
                    max_err, worst = err, inst_seed
    return SuiteResult(
        name="order invariance",
        max_rel_err=max_err,
        tolerance=EQUIVALENCE_TOL,
        instances=instances,
        worst_seed=worst,
        elapsed_s=time.perf_counter() - t0,
    )


def _end_to_end_pair(
    backbone: np.ndarray,
    labels: np.ndarray,
    c: int,
    shard_rows: np.ndarray,
    other_parts: list[np.ndarray],
    gamma: float,
    beta: float,
    head_p,
    head_r,
):
    """Full pipeline for one partition layout: returns (g_global, p_refine_k)."""
    parts = [shard_rows] + other_parts
    knowledges = []
    for j, rows in enumerate(parts):
        phi = activate(head_p, backbone[rows])
        y = one_hot(labels[rows], c)
        knowledges.append(compute_local_primary(phi, y, gamma, client_id=j))
    state = fuse_all(knowledges, gamma)
    g_global = finalize(state, len(parts))
    phi_k = activate(head_p, backbone[shard_rows])
    psi_k = activate(head_r, backbone[shard_rows])
    y_k = one_hot(labels[shard_rows], c)
    p_k = compute_refinement(psi_k, phi_k, y_k, g_global, beta)
    return g_global, p_k


def suite_heterogeneity_invariance(seed: int = 0, instances: int = 10) -> SuiteResult:
    """Client k's (global, refinement) pair under two re-partitions of the rest.

    The pooled data and client k's shard are held fixed; only how the
    remaining rows are spread over the other 7 clients changes.
    """
    t0 = time.perf_counter()
    max_err, worst = 0.0, seed
    c, others = 6, 7
    for i in range(instances):
        inst_seed = seed * 100043 + i
        rng = np.random.default_rng(inst_seed)
        n, in_dim, d_p, d_r = 400, 12, 24, 16
        backbone = rng.standard_normal((n, in_dim))
        labels = rng.integers(0, c, size=n)
        gamma, beta = 0.5, 1.0
        head_p = make_head(inst_seed + 1, in_dim, d_p, Activation.RELU)
        head_r = make_head(inst_seed + 2, in_dim, d_r, Activation.TANH)
        rows = rng.permutation(n)
        shard = np.sort(rows[: n // 8])
        rest = rows[n // 8 :]
        layouts = []
        for _ in range(2):
            shuffled = rng.permutation(rest)
            cuts = np.sort(rng.choice(np.arange(1, shuffled.size), others - 1, replace=False))
            layouts.append([np.sort(p) for p in np.split(shuffled, cuts)])
        g1, p1 = _end_to_end_pair(
            backbone, labels, c, shard, layouts[0], gamma, beta, head_p, head_r
        )
        g2, p2 = _end_to_end_pair(
            backbone, labels, c, shard, layouts[1], gamma, beta, head_p, head_r
        )
        err = max(_rel_err(g1, g2), _rel_err(p1, p2))
        if err > max_err:
            max_err, worst = err, inst_seed
    return SuiteResult(
        name="heterogeneity invariance",
        max_rel_err=max_err,
        tolerance=EQUIVALENCE_TOL,
        instances=instances,
        worst_seed=worst,
        elapsed_s=time.perf_counter() - t0,
    )


def suite_refinement_stationarity(seed: int = 0, instances: int = 20) -> SuiteResult:
    """The refinement solution must satisfy its normal equations.

    Checks (psi^T psi + beta I) P == psi^T (y - phi G) in relative
    Frobenius norm.
    """
    t0 = time.perf_counter()
    max_err, worst = 0.0, seed
    for i in range(instances):
        inst_seed = seed * 100057 + i
        rng = np.random.default_rng(inst_seed)
        n = int(rng.integers(10, 200))
        d_p = int(rng.integers(2, 64))
        d_r = int(rng.integers(2, 64))
        c = int(rng.integers(1, 12))
        beta = float(rng.choice([0.1, 1.0, 10.0]))
        phi = rng.standard_normal((n, d_p))
        psi = rng.standard_normal((n, d_r))
        y = rng.standard_normal((n, c))
        g = rng.standard_normal((d_p, c))
        p = compute_refinement(psi, phi, y, g, beta)
        gram = symmetrize(psi.T @ psi)
        gram[np.diag_indices_from(gram)] += beta
        rhs = psi.T @ (y - phi @ g)
        err = _rel_err(gram @ p, rhs)
        if err > max_err:
            max_err, worst = err, inst_seed
    return SuiteResult(
        name="refinement stationarity",
        max_rel_err=max_err,
        tolerance=STATIONARITY_TOL,
        instances=instances,
        worst_seed=worst,
        elapsed_s=time.perf_counter() - t0,
    )


def run_all(seed: int = 0, inject_fault: bool = False) -> VerifyReport:
    """Run all four suites; ``inject_fault`` sabotages finalization on purpose."""
    report = VerifyReport()
    report.suites.append(
        suite_centralized_equivalence(seed, overcount_correction=not inject_fault)
    )
    report.suites.append(suite_order_invariance(seed))
    report.suites.append(suite_heterogeneity_invariance(seed))
    report.suites.append(suite_refinement_stationarity(seed))
    return report
