"""Random fields driven by Brownian motion, excursion-set Euler characteristics,
and the kinematic-formula right-hand side on flat parameter spaces.

A field f(x) = ∫₀¹ V(B^x(s)) dB^x(s) is simulated from a family of
Brownian motions indexed by space with covariance

    E[B^x(t) B^y(s)] = (s ∧ t) · C(x, y),

realized exactly by a finite wave expansion: with independent Brownian
paths W_k and an orthogonal cos/sin basis e_k(x) scaled so that
Σ e_k(x)e_k(y) = C(x, y),

    B^x(t) = Σ_k W_k(t) e_k(x).

The Itô integral is evaluated by the same left-point sum as the
cylindrical functional F_n, so the simulated field and the functional-space
side of the kinematic formula share one time discretization.

Euler characteristics of excursion sets {f ≥ u} are counted on the
vertex-thresholded cubical complex of the grid (exact on the
discretization; refinement controls bias), and the flat parameter spaces
carry Lipschitz–Killing curvatures under the metric induced by the
time-one marginal of the driving field, which is λ₂ times the flat metric.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from ._mc import as_seed_sequence, run_blocks
from .cylinder import CylFunctional, PotentialV
from .gmf import GmfVector, gmf_surface_mc

_EXPORT_MAGIC = b"GTFS"
_EXPORT_VERSION = 1


@dataclass(frozen=True)
class ParamSpace:
    """A flat parameter space: interval, circle, or flat torus.

    ``grid`` is the number of sample points per dimension; circle and torus
    grids wrap (periodic adjacency), the interval grid does not.
    """

    kind: str
    lengths: tuple[float, ...]
    grid: int

    def __post_init__(self):
        if self.kind not in ("interval", "circle", "torus"):
            raise ValueError(f"unknown parameter space kind {self.kind!r}")
        expected = 2 if self.kind == "torus" else 1
        if len(self.lengths) != expected:
            raise ValueError(f"{self.kind} needs {expected} length(s), got {self.lengths}")
        if any(l <= 0 for l in self.lengths):
            raise ValueError(f"lengths must be positive, got {self.lengths}")
        if self.grid < 4:
            raise ValueError(f"grid must have at least 4 points, got {self.grid}")
        object.__setattr__(self, "lengths", tuple(float(l) for l in self.lengths))

    @classmethod
    def interval(cls, length: float, grid: int) -> "ParamSpace":
        return cls("interval", (length,), grid)

    @classmethod
    def circle(cls, length: float, grid: int) -> "ParamSpace":
        return cls("circle", (length,), grid)

    @classmethod
    def torus(cls, length1: float, length2: float, grid: int) -> "ParamSpace":
        return cls("torus", (length1, length2), grid)

    @property
    def dim(self) -> int:
        return 2 if self.kind == "torus" else 1

    @property
    def wraps(self) -> bool:
        return self.kind != "interval"

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.grid,) * self.dim

    def axis_points(self, axis: int) -> np.ndarray:
        length = self.lengths[axis]
        if self.wraps:
            return np.arange(self.grid) * (length / self.grid)
        return np.linspace(0.0, length, self.grid)

    def points(self) -> np.ndarray:
        """All grid points as a (G, dim) array (row-major over the grid)."""
        if self.dim == 1:
            return self.axis_points(0)[:, None]
        ax0, ax1 = self.axis_points(0), self.axis_points(1)
        xx, yy = np.meshgrid(ax0, ax1, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def spacing(self) -> float:
        denom = self.grid if self.wraps else self.grid - 1
        return max(l / denom for l in self.lengths)


@dataclass(frozen=True)
class SpatialCov:
    """Stationary unit-variance spatial covariance as a finite wave sum.

    C(x, y) = Σ_k w_k² cos⟨ω_k, x−y⟩ with Σ w_k² = 1, so C(x,x) = 1
    exactly.  ``lambda2`` is the second spectral moment: the spectral-moment
    matrix Σ w_k² ω_k ω_kᵀ must equal λ₂·I (isotropy), which the
    constructors enforce, and λ₂ equals the mixed derivative ∂²C/∂x∂y on
    the diagonal.
    """

    preset: str
    frequencies: np.ndarray  # (K, dim)
    weights: np.ndarray  # (K,)
    lambda2: float = field(init=False)

    def __post_init__(self):
        freq = np.atleast_2d(np.asarray(self.frequencies, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if freq.shape[0] != w.shape[0]:
            raise ValueError("frequencies and weights must have matching length")
        if abs(float(np.sum(w**2)) - 1.0) > 1e-12:
            raise ValueError("weights must satisfy sum of squares = 1 (unit variance)")
        mom = np.einsum("k,ki,kj->ij", w**2, freq, freq)
        lam = float(np.trace(mom)) / freq.shape[1]
        if np.max(np.abs(mom - lam * np.eye(freq.shape[1]))) > 1e-10 * max(lam, 1.0):
            raise ValueError(
                f"frequency set is not isotropic at second order: moment matrix {mom!r}"
            )
        freq = freq.copy()
        w = w.copy()
        freq.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "frequencies", freq)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lambda2", lam)

    @classmethod
    def cosine(cls, frequency: float) -> "SpatialCov":
        """C(x, y) = cos(ω(x−y)) on a one-dimensional space; λ₂ = ω²."""
        return cls("cosine", np.array([[float(frequency)]]), np.array([1.0]))

    @classmethod
    def wave_sum(cls, frequencies, weights=None) -> "SpatialCov":
        """A symmetric set of plane waves; the moment matrix must be isotropic."""
        freq = np.atleast_2d(np.asarray(frequencies, dtype=float))
        if weights is None:
            weights = np.full(freq.shape[0], 1.0 / np.sqrt(freq.shape[0]))
        return cls("wave-sum", freq, np.asarray(weights, dtype=float))

    @classmethod
    def torus_pair(cls, frequency: float) -> "SpatialCov":
        """The axis pair {(ω,0), (0,ω)} on the torus; λ₂ = ω²/2."""
        w = float(frequency)
        return cls.wave_sum(np.array([[w, 0.0], [0.0, w]]))

    @classmethod
    def squared_exponential(
        cls, lambda2: float, n_waves: int = 64, dim: int = 1, rng=0
    ) -> "SpatialCov":
        """Spectral-sample approximation of C(h) = exp(−λ₂‖h‖²/2).

        Frequencies are drawn from the kernel's spectral density N(0, λ₂·I);
        the realized covariance is the wave sum over the draw, which matches
        the squared-exponential kernel only up to O(n_waves^{−1/2})
        truncation error.  ``lambda2`` of the returned object is the realized
        second moment of the draw (exact for the realized field).  In two
        dimensions each frequency is paired with its 90° rotation so the
        moment matrix is isotropic exactly.
        """
        gen = np.random.default_rng(as_seed_sequence(rng))
        freq = gen.standard_normal((n_waves, dim)) * np.sqrt(lambda2)
        if dim == 2:
            rot = np.column_stack([-freq[:, 1], freq[:, 0]])
            freq = np.vstack([freq, rot])
        return cls("squared-exponential", freq, np.full(freq.shape[0], freq.shape[0] ** -0.5))

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    def C(self, x, y) -> np.ndarray:
        """Covariance of the time-one marginal between point arrays."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        phase = (x - y) @ self.frequencies.T
        out = np.cos(phase) @ self.weights**2
        return out if out.size > 1 else float(out[0])

    def lambda2_fd(self, step: float = 1e-4) -> np.ndarray:
        """Mixed-partial finite difference ∂²C/∂x_a∂y_b at the diagonal."""
        d = self.dim
        out = np.empty((d, d))
        for a in range(d):
            for b in range(d):
                ea = np.zeros(d)
                eb = np.zeros(d)
                ea[a] = step
                eb[b] = step
                out[a, b] = (
                    self.C(ea, eb) - self.C(ea, -eb) - self.C(-ea, eb) + self.C(-ea, -eb)
                ) / (4.0 * step * step)
        return out

    def basis(self, points: np.ndarray) -> np.ndarray:
        """Orthogonal wave basis e(x), shape (G, 2K): Σ e(x)e(y) = C(x,y)."""
        phase = np.asarray(points, dtype=float) @ self.frequencies.T
        return np.concatenate(
            [self.weights * np.cos(phase), self.weights * np.sin(phase)], axis=1
        )

    def compatible_with(self, space: ParamSpace) -> None:
        """Reject frequencies that break periodicity on wrapped spaces."""
        if self.dim != space.dim:
            raise ValueError(
                f"covariance dimension {self.dim} does not match space dimension {space.dim}"
            )
        if not space.wraps:
            return
        for axis, length in enumerate(space.lengths):
            cycles = self.frequencies[:, axis] * length / (2.0 * np.pi)
            if np.max(np.abs(cycles - np.round(cycles))) > 1e-9:
                raise ValueError(
                    f"frequencies {self.frequencies[:, axis]} are not periodic on a "
                    f"{space.kind} of length {length}"
                )


@dataclass(frozen=True)
class FieldSample:
    """One realization of the field on the grid plus its driving paths."""

    space: ParamSpace
    time_n: int
    f_values: np.ndarray  # grid-shaped
    seed: object
    driving: Optional[np.ndarray] = None  # (time_n + 1, 2K) Brownian paths

    def __post_init__(self):
        f = np.asarray(self.f_values, dtype=float)
        if f.shape != self.space.grid_shape:
            raise ValueError(f"f_values shape {f.shape} != grid shape {self.space.grid_shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("field values must be finite")
        f = f.copy()
        f.flags.writeable = False
        object.__setattr__(self, "f_values", f)

    def save(self, path, u_levels=()) -> None:
        """Write the sample as magic + version + JSON header + raw float64.

        Layout (little endian): 4-byte magic ``GTFS``, uint32 version,
        uint32 header length, UTF-8 JSON header, then the C-order float64
        grid values.  The header records kind, lengths, grid, time_n, seed
        and any threshold levels of interest.
        """
        header = {
            "version": _EXPORT_VERSION,
            "kind": self.space.kind,
            "lengths": list(self.space.lengths),
            "grid": self.space.grid,
            "time_n": self.time_n,
            "seed": repr(self.seed),
            "u_levels": list(map(float, u_levels)),
            "shape": list(self.f_values.shape),
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_EXPORT_MAGIC)
            fh.write(struct.pack("<II", _EXPORT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.f_values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> tuple["FieldSample", dict]:
        """Read a sample written by :meth:`save`; returns (sample, header)."""
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _EXPORT_MAGIC:
                raise ValueError(f"not a field export (magic {magic!r})")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != _EXPORT_VERSION:
                raise ValueError(f"unsupported export version {version}")
            header = json.loads(fh.read(hlen).decode("utf-8"))
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(header["shape"])
        if header["kind"] == "torus":
            space = ParamSpace.torus(*header["lengths"], grid=header["grid"])
        elif header["kind"] == "circle":
            space = ParamSpace.circle(header["lengths"][0], header["grid"])
        else:
            space = ParamSpace.interval(header["lengths"][0], header["grid"])
        sample = cls(space=space, time_n=header["time_n"], f_values=data, seed=header["seed"])
        return sample, header


@dataclass(frozen=True)
class EcEstimate:
    """Monte Carlo mean of the excursion Euler characteristic."""

    mean: float
    stderr: float
    reps: int


def simulate_field(
    space: ParamSpace,
    cov: SpatialCov,
    potential: PotentialV,
    time_n: int,
    rng=0,
    keep_driving: bool = True,
) -> FieldSample:
    """Draw one field realization f(x) = Σᵢ V(B^x(tᵢ))·(B^x(tᵢ₊₁) − B^x(tᵢ)).

    The Brownian motions B^x are generated on the shared uniform time grid
    through the wave basis, with i.i.d. Gaussian increments of variance
    1/time_n, and the Itô sum uses the left endpoint — the same
    discretization as the cylindrical functional F_n.  A resolution guard
    rejects grids with 4·spacing·√λ₂ ≥ 1.
    """
    if time_n < 2:
        raise ValueError(f"time_n must be >= 2, got {time_n}")
    cov.compatible_with(space)
    guard = 4.0 * space.spacing * np.sqrt(cov.lambda2)
    if guard >= 1.0:
        raise ValueError(
            f"spatial grid too coarse for lambda2={cov.lambda2:.3g}: "
            f"4*spacing*sqrt(lambda2) = {guard:.3g} >= 1"
        )
    root = as_seed_sequence(rng)
    gen = np.random.default_rng(root)
    basis = cov.basis(space.points())  # (G, 2K)
    increments = gen.standard_normal((time_n, basis.shape[1])) / np.sqrt(time_n)
    b = np.zeros(basis.shape[0])
    f = np.zeros(basis.shape[0])
    for i in range(time_n):
        db = basis @ increments[i]
        f += potential.value(b) * db
        b += db
    driving = None
    if keep_driving:
        driving = np.vstack([np.zeros((1, basis.shape[1])), np.cumsum(increments, axis=0)])
    seed = root.entropy if root.spawn_key == () else (root.entropy, root.spawn_key)
    return FieldSample(
        space=space,
        time_n=time_n,
        f_values=f.reshape(space.grid_shape),
        seed=seed,
        driving=driving,
    )


def euler_char(sample: FieldSample, u: float) -> int:
    """Euler characteristic of {f ≥ u} on the vertex-thresholded complex.

    A cell of the grid complex is kept iff all its vertices are above the
    level; χ = #V − #E (+ #squares on the torus), with periodic
    identification on wrapped spaces.  A fully supra-threshold interval
    gives 1, a full circle or torus gives 0.
    """
    above = sample.f_values >= u
    kind = sample.space.kind
    if kind == "interval":
        v = int(above.sum())
        e = int(np.count_nonzero(above[:-1] & above[1:]))
        return v - e
    if kind == "circle":
        v = int(above.sum())
        e = int(np.count_nonzero(above & np.roll(above, -1)))
        return v - e
    v = int(above.sum())
    right = np.roll(above, -1, axis=0)
    up = np.roll(above, -1, axis=1)
    e = int(np.count_nonzero(above & right)) + int(np.count_nonzero(above & up))
    f = int(np.count_nonzero(above & right & up & np.roll(right, -1, axis=1)))
    return v - e + f


def lkc(space: ParamSpace, cov: SpatialCov) -> np.ndarray:
    """Lipschitz–Killing curvatures of the space under the induced metric.

    The time-one marginal of the driving field has unit variance and second
    spectral moment λ₂, so the induced metric is λ₂ times the flat one and
    every j-dimensional volume scales by λ₂^{j/2}:

        interval [0,T] → (1, T√λ₂),  circle → (0, L√λ₂),
        torus → (0, 0, L₁L₂λ₂).
    """
    if cov.dim != space.dim:
        raise ValueError("covariance/space dimension mismatch")
    scale = np.sqrt(cov.lambda2)
    if space.kind == "interval":
        return np.array([1.0, space.lengths[0] * scale])
    if space.kind == "circle":
        return np.array([0.0, space.lengths[0] * scale])
    return np.array([0.0, 0.0, space.lengths[0] * space.lengths[1] * cov.lambda2])


def ec_mc_levels(
    space: ParamSpace,
    cov: SpatialCov,
    potential: PotentialV,
    u_levels,
    time_n: int,
    reps: int,
    rng=0,
    workers: int = 1,
) -> list[EcEstimate]:
    """Euler-characteristic means over independent field samples, one per level.

    All levels share the same field realizations; each replication runs on
    its own substream, so results are reproducible for any worker count.
    """
    if reps < 100:
        raise ValueError(f"reps must be >= 100, got {reps}")
    u_levels = [float(u) for u in u_levels]
    cov.compatible_with(space)
    root = as_seed_sequence(rng)
    children = root.spawn(reps)

    def one_rep(i: int) -> np.ndarray:
        sample = simulate_field(space, cov, potential, time_n, rng=children[i], keep_driving=False)
        return np.array([euler_char(sample, u) for u in u_levels], dtype=float)

    chi = np.stack(run_blocks(one_rep, reps, workers))
    means = chi.mean(axis=0)
    stderrs = chi.std(axis=0, ddof=1) / np.sqrt(reps)
    return [EcEstimate(float(m), float(s), reps) for m, s in zip(means, stderrs)]


def ec_mc(
    space: ParamSpace,
    cov: SpatialCov,
    potential: PotentialV,
    u: float,
    time_n: int,
    reps: int,
    rng=0,
    workers: int = 1,
) -> EcEstimate:
    """Mean and standard error of χ({f ≥ u}) over independent samples."""
    return ec_mc_levels(space, cov, potential, [u], time_n, reps, rng, workers)[0]


def excursion_volume_mc(
    space: ParamSpace,
    cov: SpatialCov,
    potential: PotentialV,
    u: float,
    time_n: int,
    reps: int,
    rng=0,
    workers: int = 1,
) -> tuple[float, float]:
    """Direct Monte Carlo of E[L_dim(A_u)] = L_dim(M)·P(f ≥ u).

    Estimates the supra-threshold volume fraction on the grid and scales by
    the top Lipschitz–Killing curvature.
    """
    root = as_seed_sequence(rng)
    children = root.spawn(reps)
    top = lkc(space, cov)[-1]

    def one_rep(i: int) -> float:
        sample = simulate_field(space, cov, potential, time_n, rng=children[i], keep_driving=False)
        return float(np.mean(sample.f_values >= u))

    fractions = np.array(run_blocks(one_rep, reps, workers))
    return top * float(fractions.mean()), top * float(fractions.std(ddof=1) / np.sqrt(reps))


def unit_ball_volume(dim: int) -> float:
    """Volume ω_dim of the unit ball in ℝ^dim (ω₀ = 1)."""
    return float(np.pi ** (dim / 2.0) / special.gamma(dim / 2.0 + 1.0))


def crofton_lkc_rhs(
    index: int,
    space: ParamSpace,
    cov: SpatialCov,
    potential: PotentialV,
    u: float,
    n: int,
    order: int,
    n_samples: int,
    rng=0,
    eps: Optional[float] = None,
    workers: int = 1,
    gmfs: Optional[GmfVector] = None,
) -> tuple[float, float]:
    """Kinematic prediction for E[L_index(A_u(f; M))].

    Evaluates Σ_{j=0}^{m−i} C(i+j, j)·ω_{i+j}/(ω_i ω_j)·(2π)^{−j/2}·
    L_{i+j}(M)·M̂_j, with M̂ the surface Monte Carlo Minkowski functionals
    of the excursion region of the cylindrical functional F_n at level u.
    For i = 0 the flag coefficients collapse to 1 and the sum is the
    expected-Euler-characteristic formula.  Pass a precomputed ``gmfs`` to
    reuse one Monte Carlo run across indices.
    """
    m = space.dim
    if not 0 <= index <= m:
        raise ValueError(f"index must lie in [0, {m}], got {index}")
    if order < m - index:
        raise ValueError(f"series order {order} too small; need >= {m - index}")
    if gmfs is None:
        region = CylFunctional(n, potential).excursion(u)
        gmfs = gmf_surface_mc(region, order, n_samples, eps=eps, rng=rng, workers=workers)
    curvatures = lkc(space, cov)
    coeff = np.zeros(order + 1)
    for j in range(m - index + 1):
        flag = (
            special.comb(index + j, j, exact=True)
            * unit_ball_volume(index + j)
            / (unit_ball_volume(index) * unit_ball_volume(j))
        )
        coeff[j] = flag * (2.0 * np.pi) ** (-j / 2.0) * curvatures[index + j]
    value = float(np.dot(coeff, gmfs.values))
    if gmfs.cov is not None:
        var = float(coeff @ gmfs.cov @ coeff)
        stderr = float(np.sqrt(max(var, 0.0)))
    else:
        stderr = float(np.sqrt(np.sum((coeff * gmfs.stderr) ** 2)))
    return value, stderr


def gkf_rhs(
    space: ParamSpace,
    cov: SpatialCov,
    potential: PotentialV,
    u: float,
    n: int,
    order: int,
    n_samples: int,
    rng=0,
    eps: Optional[float] = None,
    workers: int = 1,
    gmfs: Optional[GmfVector] = None,
) -> tuple[float, float]:
    """Right-hand side Σ_j (2π)^{−j/2} L_j(M) M̂_j of the kinematic formula."""
    if order < space.dim:
        raise ValueError(f"series order {order} must be >= space dimension {space.dim}")
    return crofton_lkc_rhs(
        0, space, cov, potential, u, n, order, n_samples,
        rng=rng, eps=eps, workers=workers, gmfs=gmfs,
    )


def check_potential_derivatives(potential: PotentialV, rel_tol: float = 1e-5) -> None:
    """Finite-difference consistency of V', …, V'''' on [−6, 6] (C⁴ check)."""
    grid = np.linspace(-6.0, 6.0, 241)
    step = 1e-4 * (1.0 + np.abs(grid))
    for k in range(4):
        fk = potential.derivative(k)
        fk1 = potential.derivative(k + 1)
        fd = (fk(grid + step) - fk(grid - step)) / (2.0 * step)
        scale = max(1.0, float(np.max(np.abs(fk1(grid)))))
        err = float(np.max(np.abs(fd - fk1(grid))))
        if err > rel_tol * scale:
            raise AssertionError(
                f"derivative order {k + 1} of potential fails finite differences: "
                f"max error {err:.3e} (scale {scale:.3e})"
            )


def validate_assumptions(
    cov: SpatialCov,
    potential: PotentialV,
    rng=0,
    pairs: int = 64,
) -> None:
    """Runtime validation of the regularity assumptions behind the formula.

    Checks, raising AssertionError on failure:
      * the potential is C⁴ by finite differences (smoothness);
      * sup-moments of |V⁽ᵏ⁾(B_t)| are finite (polynomial growth);
      * increments are Lipschitz in space: 2(1 − C(x,y)) ≤ λ₂‖x−y‖², and
        the analogue for the spatial-derivative field with the fourth
        spectral moment (so the same holds for ∇B and ∇²B).
    """
    check_potential_derivatives(potential)

    from .cylinder import derivative_sup_moments

    moments = derivative_sup_moments(potential, time_n=32, n_paths=512, p=8, rng=rng)
    if not np.all(np.isfinite(moments)):
        raise AssertionError(f"potential sup-moments are not finite: {moments!r}")

    gen = np.random.default_rng(as_seed_sequence(rng))
    d = cov.dim
    x = gen.uniform(-2.0, 2.0, size=(pairs, d))
    y = gen.uniform(-2.0, 2.0, size=(pairs, d))
    gap2 = np.sum((x - y) ** 2, axis=1)
    incr = 2.0 * (1.0 - np.asarray(cov.C(x, y)))
    if np.any(incr > cov.lambda2 * gap2 * (1.0 + 1e-9) + 1e-12):
        raise AssertionError("increment variance violates the Lipschitz bound lambda2*|x-y|^2")
    w2 = cov.weights**2
    freq_norm2 = np.sum(cov.frequencies**2, axis=1)
    lambda4 = float(np.dot(w2, freq_norm2**2))
    phase = (x - y) @ cov.frequencies.T
    incr_grad = 2.0 * ((1.0 - np.cos(phase)) @ (w2 * freq_norm2))
    if np.any(incr_grad > lambda4 * gap2 * (1.0 + 1e-9) + 1e-12):
        raise AssertionError("gradient-field increments violate the fourth-moment bound")
