"""Canonical smooth functionals used as regions and test fixtures.

All builders return :class:`~gausstube.malliavin.SmoothFunctional` instances
with batch oracles, so the Monte Carlo kernels can evaluate them on sample
stacks without per-point Python overhead.
"""

from __future__ import annotations

import numpy as np

from .malliavin import SmoothFunctional


def coordinate(dim: int, index: int = 0) -> SmoothFunctional:
    """F(x) = x[index]; the half-space building block."""
    if not 0 <= index < dim:
        raise ValueError(f"index {index} out of range for dim {dim}")
    e = np.zeros(dim)
    e[index] = 1.0

    return SmoothFunctional(
        dim=dim,
        value=lambda x: float(x[index]),
        grad=lambda x: e.copy(),
        hess=lambda x: np.zeros((dim, dim)),
        value_batch=lambda x: x[:, index],
        grad_batch=lambda x: np.broadcast_to(e, x.shape).copy(),
        hess_batch=lambda x: np.zeros((x.shape[0], dim, dim)),
    )


def norm(dim: int) -> SmoothFunctional:
    """F(x) = ‖x‖; smooth away from the origin (balls and spheres)."""

    def value(x):
        return float(np.linalg.norm(x))

    def grad(x):
        return x / np.linalg.norm(x)

    def hess(x):
        r = np.linalg.norm(x)
        eta = x / r
        return (np.eye(dim) - np.outer(eta, eta)) / r

    def value_batch(x):
        return np.linalg.norm(x, axis=1)

    def grad_batch(x):
        r = np.linalg.norm(x, axis=1)
        return x / r[:, None]

    def hess_batch(x):
        r = np.linalg.norm(x, axis=1)
        eta = x / r[:, None]
        eye = np.broadcast_to(np.eye(dim), (x.shape[0], dim, dim))
        return (eye - eta[:, :, None] * eta[:, None, :]) / r[:, None, None]

    return SmoothFunctional(
        dim=dim, value=value, grad=grad, hess=hess,
        value_batch=value_batch, grad_batch=grad_batch, hess_batch=hess_batch,
    )


def half_norm_squared(dim: int) -> SmoothFunctional:
    """F(x) = ‖x‖²/2; convex with gradient x and Hessian I."""
    return SmoothFunctional(
        dim=dim,
        value=lambda x: 0.5 * float(np.dot(x, x)),
        grad=lambda x: x.copy(),
        hess=lambda x: np.eye(dim),
        value_batch=lambda x: 0.5 * np.einsum("bi,bi->b", x, x),
        grad_batch=lambda x: x.copy(),
        hess_batch=lambda x: np.broadcast_to(np.eye(dim), (x.shape[0], dim, dim)).copy(),
    )


def quadratic(a: np.ndarray, b: np.ndarray | None = None, c: float = 0.0) -> SmoothFunctional:
    """F(x) = ½ xᵀA x + bᵀx + c for symmetric A."""
    a = np.asarray(a, dtype=float)
    dim = a.shape[0]
    if b is None:
        b = np.zeros(dim)
    b = np.asarray(b, dtype=float)
    a_sym = 0.5 * (a + a.T)

    return SmoothFunctional(
        dim=dim,
        value=lambda x: 0.5 * float(x @ a_sym @ x) + float(b @ x) + c,
        grad=lambda x: a_sym @ x + b,
        hess=lambda x: a_sym.copy(),
        value_batch=lambda x: 0.5 * np.einsum("bi,ij,bj->b", x, a_sym, x) + x @ b + c,
        grad_batch=lambda x: x @ a_sym.T + b,
        hess_batch=lambda x: np.broadcast_to(a_sym, (x.shape[0], dim, dim)).copy(),
    )
