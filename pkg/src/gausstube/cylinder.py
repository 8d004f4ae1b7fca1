"""Cylindrical (finite-dimensional) approximation of Itô-integral functionals.

The stochastic integral F(ω) = ∫₀¹ V(ω_s) dω_s is approximated on an
n-point time grid by the Itô sum

    F_n(y₁,…,y_n) = n^{−1/2} Σ_{i=1..n} V(n^{−1/2} Σ_{j<i} y_j) · y_i,

where the yᵢ are the √n-scaled Brownian increments, i.e. i.i.d. standard
Gaussians — so F_n is a smooth functional on ℝⁿ under the canonical
Gaussian measure and the whole Minkowski-functional machinery applies.
Gradient and Hessian are analytic: with prefix sums S_m = Σ_{j≤m} y_j,

    ∂F_n/∂y_m   = n^{−1/2} V(S_{m−1}/√n) + n^{−1} Σ_{i>m} V′(S_{i−1}/√n) yᵢ,
    ∂²F_n/∂y_l∂y_m = n^{−1} V′(S_{M−1}/√n)·1{l≠m} + n^{−3/2} Σ_{i>M} V″(S_{i−1}/√n) yᵢ,

with M = max(l, m): banded-plus-suffix-sum structure, so batched Hessians
cost O(B·n²) memory but only O(B·n) potential evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .gmf import GmfVector, RegionSpec, gmf_surface_mc, gmf_two_sided
from ._mc import as_seed_sequence
from .malliavin import SmoothFunctional
from .series import DEFAULT_ORDER

#: Default cap on the time-grid size; Hessian work grows like n² per sample.
MAX_TIME_GRID = 256


@dataclass(frozen=True)
class PotentialV:
    """An integrand V: ℝ → ℝ with derivatives up to fourth order.

    All callables must accept numpy arrays elementwise.  ``growth_bound``
    is the polynomial degree used by the moment diagnostics.
    """

    value: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    d4: Callable
    growth_bound: int
    name: Optional[str] = None

    @classmethod
    def preset(cls, name: str) -> "PotentialV":
        try:
            return _PRESETS[name]
        except KeyError:
            raise ValueError(
                f"unknown potential preset {name!r}; choose from {sorted(_PRESETS)}"
            ) from None

    def derivative(self, k: int) -> Callable:
        return (self.value, self.d1, self.d2, self.d3, self.d4)[k]


def _const(c: float) -> Callable:
    return lambda b: np.full_like(np.asarray(b, dtype=float), c)


_PRESETS = {
    "one": PotentialV(_const(1.0), _const(0.0), _const(0.0), _const(0.0), _const(0.0), 0, "one"),
    "identity": PotentialV(
        lambda b: np.asarray(b, dtype=float),
        _const(1.0), _const(0.0), _const(0.0), _const(0.0), 1, "identity",
    ),
    "sin": PotentialV(
        np.sin,
        np.cos,
        lambda b: -np.sin(b),
        lambda b: -np.cos(b),
        np.sin,
        0,
        "sin",
    ),
    "cubic": PotentialV(
        lambda b: np.asarray(b, dtype=float) ** 3,
        lambda b: 3.0 * np.asarray(b, dtype=float) ** 2,
        lambda b: 6.0 * np.asarray(b, dtype=float),
        _const(6.0),
        _const(0.0),
        3,
        "cubic",
    ),
}


@lru_cache(maxsize=8)
def _max_index_matrix(n: int) -> np.ndarray:
    idx = np.maximum.outer(np.arange(n), np.arange(n))
    idx.flags.writeable = False
    return idx


def _suffix_excl(a: np.ndarray) -> np.ndarray:
    """T[m] = Σ_{i>m} a[i] along the last axis."""
    c = np.cumsum(a[:, ::-1], axis=1)[:, ::-1]
    out = np.empty_like(c)
    out[:, :-1] = c[:, 1:]
    out[:, -1] = 0.0
    return out


@dataclass(frozen=True)
class CylFunctional:
    """The Itô-sum functional F_n on ℝⁿ for a given potential V."""

    n: int
    potential: PotentialV

    def __post_init__(self):
        if not 2 <= self.n <= MAX_TIME_GRID:
            raise ValueError(
                f"time-grid size must lie in [2, {MAX_TIME_GRID}], got {self.n}"
            )

    def _prefix_args(self, y: np.ndarray) -> np.ndarray:
        """S_{i−1}/√n for each summand, batched: (B, n)."""
        s = np.cumsum(y, axis=1)
        args = np.empty_like(s)
        args[:, 0] = 0.0
        args[:, 1:] = s[:, :-1]
        return args / np.sqrt(self.n)

    def value_batch(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        vals = self.potential.value(self._prefix_args(y))
        return (vals * y).sum(axis=1) / np.sqrt(self.n)

    def grad_batch(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        n = self.n
        args = self._prefix_args(y)
        vals = self.potential.value(args)
        tail = _suffix_excl(self.potential.d1(args) * y)
        return vals / np.sqrt(n) + tail / n

    def hess_batch(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        n = self.n
        args = self._prefix_args(y)
        d1 = self.potential.d1(args)
        tail2 = _suffix_excl(self.potential.d2(args) * y) * n**-1.5
        idx = _max_index_matrix(n)
        h = d1[:, idx] / n + tail2[:, idx]
        diag = np.arange(n)
        h[:, diag, diag] = tail2
        return h

    def value(self, y: np.ndarray) -> float:
        return float(self.value_batch(np.asarray(y, dtype=float)[None, :])[0])

    def grad(self, y: np.ndarray) -> np.ndarray:
        return self.grad_batch(np.asarray(y, dtype=float)[None, :])[0]

    def hess(self, y: np.ndarray) -> np.ndarray:
        return self.hess_batch(np.asarray(y, dtype=float)[None, :])[0]

    def functional(self) -> SmoothFunctional:
        """SmoothFunctional facade of dimension n."""
        return SmoothFunctional(
            dim=self.n,
            value=self.value,
            grad=self.grad,
            hess=self.hess,
            value_batch=self.value_batch,
            grad_batch=self.grad_batch,
            hess_batch=self.hess_batch,
        )

    def excursion(self, u: float) -> RegionSpec:
        return RegionSpec(self.functional(), u, "excursion")


def eval_Fn(cyl: CylFunctional, y: np.ndarray) -> float:
    """F_n at a single point (S₀ = 0 for the empty prefix)."""
    return cyl.value(y)


def grad_Fn(cyl: CylFunctional, y: np.ndarray) -> np.ndarray:
    return cyl.grad(y)


def hess_Fn(cyl: CylFunctional, y: np.ndarray) -> np.ndarray:
    return cyl.hess(y)


def limit_gmf_chisq(u: float, order: int = DEFAULT_ORDER) -> GmfVector:
    """Minkowski functionals of the limiting region for V(b) = b.

    For V(b)=b the integral is (ω(1)² − 1)/2, so the excursion region in
    path space is {|ω(1)| ≥ a} with a = √(2u+1).  Its Cameron–Martin
    distance is (a − |ω(1)|)⁺ — shifting a path by h moves ω(1) by at most
    ‖h‖, with equality for linear paths — so the tube volume is 2Ψ(a−ρ) and
    M₀ = 2Ψ(a), M_j = 2H_{j−1}(a)φ(a).
    """
    if u <= -0.5:
        raise ValueError(f"level must exceed -1/2 (the region is everything), got {u}")
    return gmf_two_sided(np.sqrt(2.0 * u + 1.0), order)


@dataclass(frozen=True)
class ConvergenceReport:
    """Minkowski estimates of F_n excursions along a grid of time resolutions."""

    u: float
    n_grid: tuple[int, ...]
    estimates: tuple[GmfVector, ...]
    target: Optional[GmfVector]

    def deviations(self) -> Optional[np.ndarray]:
        if self.target is None:
            return None
        return np.stack([g.values - self.target.values for g in self.estimates])

    def rows(self) -> list[dict]:
        out = []
        for n, g in zip(self.n_grid, self.estimates):
            for j in range(g.order + 1):
                row = {
                    "n": n,
                    "j": j,
                    "estimate": float(g.values[j]),
                    "stderr": float(g.stderr[j]),
                }
                if self.target is not None:
                    row["target"] = float(self.target.values[j])
                out.append(row)
        return out


def convergence_study(
    potential: PotentialV,
    u: float,
    order: int,
    n_grid,
    n_samples: int,
    rng=0,
    eps: Optional[float] = None,
    workers: int = 1,
) -> ConvergenceReport:
    """Estimate M_j(F_n⁻¹[u,∞)) along an increasing grid of n.

    When the potential is the identity the chi-squared limit targets are
    attached; for the constant potential F_n is exactly linear and the
    half-space values are the (n-independent) truth.
    """
    n_grid = tuple(int(n) for n in n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError(f"n_grid must be strictly increasing, got {n_grid}")
    root = as_seed_sequence(rng)
    children = root.spawn(len(n_grid))
    estimates = []
    for child, n in zip(children, n_grid):
        region = CylFunctional(n, potential).excursion(u)
        estimates.append(
            gmf_surface_mc(region, order, n_samples, eps=eps, rng=child, workers=workers)
        )
    target = None
    if potential.name == "identity":
        target = limit_gmf_chisq(u, order)
    elif potential.name == "one":
        from .gmf import gmf_halfspace

        target = gmf_halfspace(u, order)
    return ConvergenceReport(u=u, n_grid=n_grid, estimates=tuple(estimates), target=target)


def derivative_sup_moments(
    potential: PotentialV,
    time_n: int,
    n_paths: int,
    p: int = 8,
    rng=0,
) -> np.ndarray:
    """Empirical p-th moments of sup_t |V⁽ᵏ⁾(B_t)|, k = 0..4.

    Smoke check that the potential's derivatives have finite moments along
    Brownian paths (they do whenever V has polynomial growth); returns the
    p-th root of the k-indexed moment estimates.
    """
    gen = np.random.default_rng(as_seed_sequence(rng))
    increments = gen.standard_normal((n_paths, time_n)) / np.sqrt(time_n)
    b = np.cumsum(increments, axis=1)
    out = np.empty(5)
    for k in range(5):
        sup = np.max(np.abs(potential.derivative(k)(b)), axis=1)
        out[k] = float(np.mean(sup**p)) ** (1.0 / p)
    return out
