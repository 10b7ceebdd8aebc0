"""Complex oblique manifold: complex matrices whose columns have unit Euclidean norm.

Points and tangent vectors are plain complex ndarrays of shape (n, M). The
metric is the real part of the Frobenius inner product, so every column is a
unit sphere in R^(2n) and the geometry below is the product of those spheres.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "StepSizeError",
    "random_point",
    "inner",
    "norm",
    "project_to_tangent",
    "retract",
    "transport",
    "column_norm_error",
    "tangency_error",
]


class StepSizeError(ArithmeticError):
    """The retraction received a step that collapses a column to zero."""


def _col_inner(X, Z):
    return np.real(np.sum(X.conj() * Z, axis=0))


def random_point(shape, rng: np.random.Generator) -> np.ndarray:
    n, M = shape
    X = (rng.standard_normal((n, M)) + 1j * rng.standard_normal((n, M))) / np.sqrt(2.0)
    return X / np.linalg.norm(X, axis=0)


def inner(Z1: np.ndarray, Z2: np.ndarray) -> float:
    return float(np.real(np.vdot(Z1, Z2)))


def norm(Z: np.ndarray) -> float:
    return float(np.linalg.norm(Z))


def project_to_tangent(X: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Remove from each column of ``G`` its radial component along the column of ``X``."""
    return G - _col_inner(X, G) * X


def retract(X: np.ndarray, Z: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    Y = X + alpha * Z
    nrm = np.linalg.norm(Y, axis=0)
    if np.any(nrm <= np.finfo(float).tiny) or not np.all(np.isfinite(nrm)):
        raise StepSizeError("retraction step produced a zero or non-finite column")
    return Y / nrm


def transport(X_from: np.ndarray, X_to: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Projection-based vector transport onto the tangent space at ``X_to``."""
    return project_to_tangent(X_to, Z)


def column_norm_error(X: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.norm(X, axis=0) - 1.0)))


def tangency_error(X: np.ndarray, Z: np.ndarray) -> float:
    return float(np.max(np.abs(_col_inner(X, Z))))
