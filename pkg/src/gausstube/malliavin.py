"""Finite-dimensional Gaussian calculus: divergence, unit normals, det₂, Ramer densities.

Everything here lives on ℝᵏ with the canonical Gaussian measure.  The
divergence is the Gaussian one,

    δ(V)(x) = Σᵢ Vᵢ(x)·xᵢ − Σᵢ ∂Vᵢ/∂xᵢ(x),

i.e. minus the Riemannian divergence under the Gaussian weight, so that
δ(eᵢ) has law N(0,1).  The Carleman–Fredholm determinant

    det₂(I + ρA) = Π (1 + ρλᵢ) e^{−ρλᵢ}

enters the change-of-variables density for the shift x ↦ x + ρη(x):

    Y_ρ^η(x) = det₂(I + ρ∇η(x)) · exp(−ρ·δ(η)(x) − ρ²‖η(x)‖²/2).

Two independent evaluation routes are kept: an exact one,
det(I+ρA)·exp(−ρ·tr A), for point values, and an eigenvalue-free power
series exp(Σ_{m≥2} (−1)^{m+1} tr(Aᵐ) ρᵐ/m) for coefficient extraction.
All functions are pure; the supplied oracles must be stateless so Monte
Carlo loops can evaluate them concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DegeneratePointError, ValidityRadiusError
from .series import DEFAULT_ORDER, TruncSeries, series_exp

#: Gradient norms below this are treated as numerically degenerate points.
DEFAULT_GRAD_FLOOR = 1e-10


@dataclass(frozen=True)
class SmoothFunctional:
    """A scalar functional on ℝᵏ with gradient and Hessian oracles.

    ``value``, ``grad`` and ``hess`` act on a single point (a (k,) array).
    The optional ``*_batch`` oracles act on (B, k) stacks and exist purely
    for speed; when absent the per-point oracle is applied row by row.
    """

    dim: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    value_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grad_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def values(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.value_batch is not None:
            return np.asarray(self.value_batch(x), dtype=float)
        return np.array([self.value(row) for row in x], dtype=float)

    def grads(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad_batch is not None:
            return np.asarray(self.grad_batch(x), dtype=float)
        return np.stack([np.asarray(self.grad(row), dtype=float) for row in x])

    def hessians(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hess_batch is not None:
            return np.asarray(self.hess_batch(x), dtype=float)
        return np.stack([np.asarray(self.hess(row), dtype=float) for row in x])


@dataclass(frozen=True)
class VectorField:
    """A vector field on ℝᵏ with a Jacobian oracle.

    ``jacobian(x)[i, j]`` is ∂Vᵢ/∂xⱼ(x).
    """

    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def constant(cls, h: np.ndarray) -> "VectorField":
        h = np.asarray(h, dtype=float)
        k = h.shape[0]
        return cls(dim=k, value=lambda x: h, jacobian=lambda x: np.zeros((k, k)))

    @classmethod
    def linear(cls, a: np.ndarray) -> "VectorField":
        """x ↦ A x."""
        a = np.asarray(a, dtype=float)
        return cls(dim=a.shape[0], value=lambda x: a @ x, jacobian=lambda x: a)


def divergence(v: VectorField, x: np.ndarray) -> float:
    """Gaussian divergence δ(V)(x) = ⟨V(x), x⟩ − tr ∇V(x)."""
    x = np.asarray(x, dtype=float)
    return float(np.dot(v.value(x), x) - np.trace(v.jacobian(x)))


def unit_normal(
    func: SmoothFunctional,
    orientation: int,
    x: np.ndarray,
    grad_floor: float = DEFAULT_GRAD_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normal η = s·∇F/‖∇F‖ and its Jacobian ∇η at x.

    ``orientation`` is +1 for sub-level regions {F ≤ u} and −1 for excursion
    regions {F ≥ u}, so η always points out of the region.  The Jacobian is
    the exact derivative of the normalized gradient,

        ∇η = s·(∇²F/‖∇F‖ − ∇F (∇F)ᵀ ∇²F / ‖∇F‖³).

    Raises :class:`DegeneratePointError` when ‖∇F(x)‖ falls below
    ``grad_floor``: such points are excluded from surface integrals.
    """
    if orientation not in (+1, -1):
        raise ValueError(f"orientation must be +1 or -1, got {orientation}")
    x = np.asarray(x, dtype=float)
    g = np.asarray(func.grad(x), dtype=float)
    gn = float(np.linalg.norm(g))
    if gn < grad_floor:
        raise DegeneratePointError(
            f"gradient norm {gn:.3e} below floor {grad_floor:.1e} at x={x!r}"
        )
    h = np.asarray(func.hess(x), dtype=float)
    eta = orientation * g / gn
    hg = h @ g
    eta_jac = orientation * (h / gn - np.outer(g, hg) / gn**3)
    return eta, eta_jac


def normal_field(
    func: SmoothFunctional,
    orientation: int,
    grad_floor: float = DEFAULT_GRAD_FLOOR,
) -> VectorField:
    """The outward unit normal of {F ≤ u} / {F ≥ u} packaged as a VectorField."""

    def value(x):
        return unit_normal(func, orientation, x, grad_floor)[0]

    def jacobian(x):
        return unit_normal(func, orientation, x, grad_floor)[1]

    return VectorField(dim=func.dim, value=value, jacobian=jacobian)


def _trace_powers(a: np.ndarray, max_power: int) -> np.ndarray:
    """tr(A^m) for m = 1..max_power by repeated dense multiplication."""
    traces = np.empty(max_power)
    p = a
    traces[0] = np.trace(p)
    for m in range(2, max_power + 1):
        p = p @ a
        traces[m - 1] = np.trace(p)
    return traces


def det2_series(a: np.ndarray, order: int = DEFAULT_ORDER) -> TruncSeries:
    """Coefficients of ρ ↦ det₂(I + ρA) = Π(1+ρλᵢ)e^{−ρλᵢ}.

    Uses log det₂(I+ρA) = Σ_{m≥2} (−1)^{m+1} tr(Aᵐ) ρᵐ/m, so no
    eigendecomposition is needed; coefficient 0 is 1 and coefficient 1 is 0
    for every A (the exponential factor cancels the trace).
    """
    a = np.asarray(a, dtype=float)
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    expo = np.zeros(order + 1)
    if order >= 2:
        traces = _trace_powers(a, order)
        for m in range(2, order + 1):
            expo[m] = ((-1) ** (m + 1)) * traces[m - 1] / m
    return series_exp(TruncSeries(order, expo))


def det2_exact(a: np.ndarray) -> float:
    """det₂(I + A) evaluated exactly as det(I + A)·exp(−tr A)."""
    a = np.asarray(a, dtype=float)
    k = a.shape[0]
    return float(np.linalg.det(np.eye(k) + a) * np.exp(-np.trace(a)))


def ramer_density(
    eta: VectorField, rho: float, x: np.ndarray, check_positive: bool = True
) -> float:
    """Change-of-variables density Y_ρ^η(x) for the shift x ↦ x + ρη(x).

    Evaluates det₂ by the exact determinant route.  For small ρ the det₂
    factor is positive and no modulus is applied; a non-positive factor
    means ρ left the validity radius of the expansion and raises
    :class:`ValidityRadiusError` so the caller can discard the sample.

    The ρ = 0 density is exactly 1.  For a constant field η ≡ h the density
    reduces to the Cameron–Martin factor exp(−ρ⟨h,x⟩ − ρ²‖h‖²/2), and the
    corresponding shift identity reads E[g(x − ρh)] = E[g(x)·Y_ρ^h(x)].
    """
    x = np.asarray(x, dtype=float)
    e = np.asarray(eta.value(x), dtype=float)
    jac = np.asarray(eta.jacobian(x), dtype=float)
    k = e.shape[0]
    det_factor = float(np.linalg.det(np.eye(k) + rho * jac))
    if check_positive and det_factor <= 0.0:
        raise ValidityRadiusError(
            f"det(I + rho*grad eta) = {det_factor:.3e} <= 0 at rho={rho}; "
            "sample lies outside the validity radius"
        )
    delta = float(np.dot(e, x) - np.trace(jac))
    log_y = (
        -rho * np.trace(jac)  # turns det into det2
        - rho * delta
        - 0.5 * rho**2 * float(np.dot(e, e))
    )
    return det_factor * float(np.exp(log_y))


def jacobian_series(
    func: SmoothFunctional,
    orientation: int,
    x: np.ndarray,
    order: int = DEFAULT_ORDER,
    grad_floor: float = DEFAULT_GRAD_FLOOR,
) -> TruncSeries:
    """Taylor coefficients of ρ ↦ det₂(I+ρ∇η)·exp(−ρδ(η)−ρ²/2) at x.

    η is the outward unit normal of the region cut out by ``func`` at the
    given orientation; the whole integrand is assembled inside one
    series_exp:

        exp( −ρ·δ(η) − ρ²/2 + Σ_{m=2..J} (−1)^{m+1} tr((∇η)ᵐ) ρᵐ/m ).

    Coefficient 0 is always 1.  Integrating j!·coefficient_j against the
    Gaussian surface measure of the region boundary gives the (j+1)-th
    Gaussian Minkowski functional.
    """
    x = np.asarray(x, dtype=float)
    eta, eta_jac = unit_normal(func, orientation, x, grad_floor)
    delta = float(np.dot(eta, x) - np.trace(eta_jac))
    expo = np.zeros(order + 1)
    if order >= 1:
        expo[1] = -delta
    if order >= 2:
        traces = _trace_powers(eta_jac, order)
        expo[2] = -0.5 - 0.5 * traces[1]
        for m in range(3, order + 1):
            expo[m] = ((-1) ** (m + 1)) * traces[m - 1] / m
    return series_exp(TruncSeries(order, expo))


def jacobian_coeffs_batch(
    x: np.ndarray,
    grads: np.ndarray,
    hessians: np.ndarray,
    orientation: int,
    order: int,
    grad_floor: float = DEFAULT_GRAD_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`jacobian_series` over a stack of points.

    Parameters are stacks: ``x`` (B,k), ``grads`` (B,k), ``hessians``
    (B,k,k).  Returns ``(coeffs, degenerate)`` where ``coeffs`` is (B, J+1)
    and ``degenerate`` marks rows whose gradient norm fell below the floor
    (their coefficients are set to 0 and must be skipped by the caller).
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(grads, dtype=float)
    h = np.asarray(hessians, dtype=float)
    nb = x.shape[0]
    gn = np.linalg.norm(g, axis=1)
    degenerate = gn < grad_floor
    gn_safe = np.where(degenerate, 1.0, gn)

    s = float(orientation)
    eta = s * g / gn_safe[:, None]
    hg = np.einsum("bij,bj->bi", h, g)
    eta_jac = s * (h / gn_safe[:, None, None] - g[:, :, None] * hg[:, None, :] / gn_safe[:, None, None] ** 3)

    delta = np.einsum("bi,bi->b", eta, x) - np.einsum("bii->b", eta_jac)

    expo = np.zeros((nb, order + 1))
    if order >= 1:
        expo[:, 1] = -delta
    if order >= 2:
        expo[:, 2] = -0.5 - 0.5 * np.einsum("bij,bji->b", eta_jac, eta_jac)
    if order >= 3:
        p = np.matmul(eta_jac, eta_jac)
        for m in range(3, order + 1):
            p = np.matmul(p, eta_jac)
            expo[:, m] = ((-1) ** (m + 1)) * np.einsum("bii->b", p) / m

    # exp of the exponent series, vectorized over the batch
    coeffs = np.zeros((nb, order + 1))
    coeffs[:, 0] = 1.0
    for n in range(1, order + 1):
        acc = np.zeros(nb)
        for m in range(1, n + 1):
            acc += m * expo[:, m] * coeffs[:, n - m]
        coeffs[:, n] = acc / n
    coeffs[degenerate] = 0.0
    return coeffs, degenerate


def check_derivatives(
    func: SmoothFunctional,
    rng: np.random.Generator,
    n_probes: int = 50,
    rel_tol: float = 1e-5,
) -> None:
    """Verify grad/hess against central finite differences at Gaussian probes.

    The step is 1e−4·(1+‖x‖); gradients of ``value`` and Hessians of
    ``grad`` must match to relative error ``rel_tol``, and the Hessian must
    be symmetric to 1e−10.  Raises AssertionError on failure.
    """
    k = func.dim
    for _ in range(n_probes):
        x = rng.standard_normal(k)
        step = 1e-4 * (1.0 + np.linalg.norm(x))
        g = np.asarray(func.grad(x), dtype=float)
        g_fd = np.empty(k)
        h_fd = np.empty((k, k))
        for i in range(k):
            e = np.zeros(k)
            e[i] = step
            g_fd[i] = (func.value(x + e) - func.value(x - e)) / (2 * step)
            h_fd[:, i] = (np.asarray(func.grad(x + e)) - np.asarray(func.grad(x - e))) / (2 * step)
        scale_g = max(1.0, float(np.linalg.norm(g)))
        if np.linalg.norm(g_fd - g) > rel_tol * scale_g:
            raise AssertionError(
                f"gradient mismatch at x={x!r}: |fd-grad| = "
                f"{np.linalg.norm(g_fd - g):.3e} (scale {scale_g:.3e})"
            )
        h = np.asarray(func.hess(x), dtype=float)
        if np.max(np.abs(h - h.T)) > 1e-10:
            raise AssertionError(f"Hessian not symmetric at x={x!r}")
        scale_h = max(1.0, float(np.linalg.norm(h)))
        if np.linalg.norm(h_fd - h) > rel_tol * scale_h:
            raise AssertionError(
                f"Hessian mismatch at x={x!r}: |fd-hess| = "
                f"{np.linalg.norm(h_fd - h):.3e} (scale {scale_h:.3e})"
            )


def check_jacobian(
    field: VectorField,
    rng: np.random.Generator,
    n_probes: int = 50,
    rel_tol: float = 1e-5,
) -> None:
    """Finite-difference validation of a VectorField's Jacobian oracle."""
    k = field.dim
    for _ in range(n_probes):
        x = rng.standard_normal(k)
        step = 1e-4 * (1.0 + np.linalg.norm(x))
        jac = np.asarray(field.jacobian(x), dtype=float)
        jac_fd = np.empty((k, k))
        for i in range(k):
            e = np.zeros(k)
            e[i] = step
            jac_fd[:, i] = (np.asarray(field.value(x + e)) - np.asarray(field.value(x - e))) / (2 * step)
        scale = max(1.0, float(np.linalg.norm(jac)))
        if np.linalg.norm(jac_fd - jac) > rel_tol * scale:
            raise AssertionError(
                f"Jacobian mismatch at x={x!r}: |fd-jac| = "
                f"{np.linalg.norm(jac_fd - jac):.3e}"
            )
