"""Client-side computation: local primary stream, refinement stream, inference.

A client trains in two closed-form steps. First it solves a local ridge
regression over its primary features and ships the regularized gram matrix
(the auto-correlation matrix) together with the local solution; that pair is
all the server ever sees. After the global primary stream comes back, the
client fits a second ridge regression of the residual onto its refinement
features. Inference blends the two streams with a non-negative weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import DataError, ShapeError
from .features import ProjectionHead, activate
from .linalg import as_matrix, spd_solve, symmetrize


@dataclass(frozen=True)
class ClientHyper:
    """Per-run hyperparameters shared by all clients.

    gamma regularizes the primary stream, beta the refinement stream, and
    lam blends the two at inference time (0 disables refinement).
    """

    gamma: float = 0.01
    beta: float = 1.0
    lam: float = 0.3

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class LocalKnowledge:
    """What one client uploads: its auto-correlation matrix and local solution."""

    client_id: int
    a: np.ndarray  # (d_p, d_p), phi^T phi + gamma*I, symmetric positive definite
    g_local: np.ndarray  # (d_p, c)
    n_samples: int


@dataclass(frozen=True)
class PersonalModel:
    """Everything one client needs at inference time."""

    g_global: np.ndarray  # (d_p, c), shared primary stream
    p_refine: np.ndarray  # (d_r, c), private refinement stream
    lam: float
    primary_head: ProjectionHead
    refine_head: ProjectionHead


def compute_local_primary(phi, y, gamma: float, client_id: int = 0) -> LocalKnowledge:
    """Solve the local primary ridge problem and package the upload.

    a = phi^T phi + gamma*I (symmetrized), g_local solves a @ g = phi^T y.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[0] == 0 or phi.shape[1] == 0:
        raise DataError(f"client {client_id} has no usable feature rows (shape {phi.shape})")
    phi = as_matrix(phi, "phi")
    y = as_matrix(y, "y")
    if phi.shape[0] != y.shape[0]:
        raise ShapeError(f"phi has {phi.shape[0]} rows but y has {y.shape[0]}")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    a = symmetrize(phi.T @ phi)
    a[np.diag_indices_from(a)] += gamma
    g_local = spd_solve(a, phi.T @ y)
    return LocalKnowledge(
        client_id=client_id, a=a, g_local=g_local, n_samples=phi.shape[0]
    )


def compute_refinement(psi, phi, y, g_global, beta: float) -> np.ndarray:
    """Ridge-regress the primary stream's local residual onto the refinement features.

    Returns (psi^T psi + beta*I)^-1 psi^T (y - phi @ g_global). The N x c
    residual is materialized once rather than forming d_r x d_p
    cross-products.
    """
    psi = as_matrix(psi, "psi")
    phi = as_matrix(phi, "phi")
    y = as_matrix(y, "y")
    g_global = as_matrix(g_global, "g_global")
    if not (psi.shape[0] == phi.shape[0] == y.shape[0]):
        raise ShapeError(
            f"row counts differ: psi {psi.shape[0]}, phi {phi.shape[0]}, y {y.shape[0]}"
        )
    if phi.shape[1] != g_global.shape[0] or y.shape[1] != g_global.shape[1]:
        raise ShapeError(
            f"global stream shape {g_global.shape} does not match phi "
            f"({phi.shape}) and y ({y.shape})"
        )
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    gram = symmetrize(psi.T @ psi)
    gram[np.diag_indices_from(gram)] += beta
    residual = y - phi @ g_global
    return spd_solve(gram, psi.T @ residual)


def predict(model: PersonalModel, backbone_out) -> tuple[np.ndarray, np.ndarray]:
    """Blended scores and argmax classes for rows of backbone output.

    scores = primary_features @ g_global + lam * refine_features @ p_refine.
    Ties in the argmax resolve to the lowest class index.
    """
    b = as_matrix(backbone_out, "backbone_out")
    scores = activate(model.primary_head, b) @ model.g_global
    scores = scores + model.lam * (activate(model.refine_head, b) @ model.p_refine)
    classes = np.argmax(scores, axis=1).astype(np.int64)
    return scores, classes


def local_accuracy(model: PersonalModel, test: LabeledDataset) -> float:
    """Fraction of test rows whose predicted class matches the label.

    ``test.features`` must already be backbone outputs (the model carries
    only the projection heads, not the extractor).
    """
    _, classes = predict(model, test.features)
    return float(np.mean(classes == test.labels))
