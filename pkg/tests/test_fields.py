import numpy as np
import pytest

from gausstube.cylinder import PotentialV
from gausstube.fields import (
    EcEstimate,
    FieldSample,
    ParamSpace,
    SpatialCov,
    crofton_lkc_rhs,
    ec_mc,
    ec_mc_levels,
    euler_char,
    excursion_volume_mc,
    gkf_rhs,
    lkc,
    simulate_field,
    unit_ball_volume,
    validate_assumptions,
)
from gausstube.series import gaussian_pdf, gaussian_tail

ONE = PotentialV.preset("one")
IDENTITY = PotentialV.preset("identity")


class TestParamSpace:
    def test_kinds_and_dims(self):
        assert ParamSpace.interval(10.0, 50).dim == 1
        assert ParamSpace.circle(6.0, 50).wraps
        assert ParamSpace.torus(6.0, 6.0, 16).dim == 2

    def test_interval_endpoints(self):
        s = ParamSpace.interval(10.0, 101)
        pts = s.points()
        assert pts[0, 0] == 0.0 and pts[-1, 0] == 10.0
        assert s.spacing == pytest.approx(0.1)

    def test_circle_wraps_without_duplicate(self):
        s = ParamSpace.circle(2 * np.pi, 8)
        pts = s.points()[:, 0]
        assert pts[0] == 0.0
        assert pts[-1] < 2 * np.pi

    def test_validation(self):
        with pytest.raises(ValueError):
            ParamSpace("interval", (10.0, 2.0), 50)
        with pytest.raises(ValueError):
            ParamSpace.interval(-1.0, 50)
        with pytest.raises(ValueError):
            ParamSpace.interval(1.0, 2)


class TestSpatialCov:
    def test_unit_variance_exact(self):
        cov = SpatialCov.cosine(2.0)
        x = np.array([[0.3]])
        assert cov.C(x, x) == pytest.approx(1.0, abs=1e-15)

    def test_cosine_covariance(self):
        cov = SpatialCov.cosine(2.0)
        assert cov.C(np.array([[1.0]]), np.array([[0.25]])) == pytest.approx(
            np.cos(2.0 * 0.75), rel=1e-14
        )

    def test_lambda2_matches_finite_differences(self):
        for cov in (SpatialCov.cosine(1.5), SpatialCov.torus_pair(2.0)):
            fd = cov.lambda2_fd()
            assert np.allclose(fd, cov.lambda2 * np.eye(cov.dim), atol=1e-6)

    def test_torus_pair_isotropic(self):
        cov = SpatialCov.torus_pair(3.0)
        assert cov.lambda2 == pytest.approx(4.5)

    def test_anisotropic_rejected(self):
        with pytest.raises(ValueError, match="isotropic"):
            SpatialCov.wave_sum(np.array([[1.0, 0.0]]))

    def test_squared_exponential_isotropic_2d(self):
        cov = SpatialCov.squared_exponential(1.0, n_waves=16, dim=2, rng=3)
        mom = np.einsum("k,ki,kj->ij", cov.weights**2, cov.frequencies, cov.frequencies)
        assert np.allclose(mom, cov.lambda2 * np.eye(2), atol=1e-12)

    def test_squared_exponential_approximates_kernel(self):
        cov = SpatialCov.squared_exponential(1.0, n_waves=4096, dim=1, rng=5)
        h = np.array([[0.7]])
        target = np.exp(-cov.lambda2 * 0.49 / 2)
        assert cov.C(h, np.array([[0.0]])) == pytest.approx(target, abs=0.05)

    def test_periodicity_validation(self):
        cov = SpatialCov.cosine(1.1)
        with pytest.raises(ValueError, match="periodic"):
            cov.compatible_with(ParamSpace.circle(2 * np.pi, 64))
        SpatialCov.cosine(1.0).compatible_with(ParamSpace.circle(2 * np.pi, 64))


class TestSimulateField:
    def test_deterministic(self):
        space = ParamSpace.interval(5.0, 64)
        cov = SpatialCov.cosine(1.0)
        a = simulate_field(space, cov, IDENTITY, 16, rng=11)
        b = simulate_field(space, cov, IDENTITY, 16, rng=11)
        assert np.array_equal(a.f_values, b.f_values)
        assert np.array_equal(a.driving, b.driving)

    def test_constant_potential_gives_time_one_marginal(self):
        # V = 1 telescopes: f(x) = B^x(1) = W(1)·e(x) exactly
        space = ParamSpace.interval(5.0, 32)
        cov = SpatialCov.cosine(1.0)
        s = simulate_field(space, cov, ONE, 8, rng=13)
        w1 = s.driving[-1]
        basis = cov.basis(space.points())
        assert np.allclose(s.f_values, basis @ w1, atol=1e-12)

    def test_covariance_calibration(self):
        # empirical Cov(B^x(1), B^y(1)) over 10^4 reps matches C at random pairs
        space = ParamSpace.interval(4.0, 40)
        cov = SpatialCov.cosine(1.0)
        reps = 10_000
        vals = np.empty((reps, 40))
        for i in range(reps):
            vals[i] = simulate_field(space, cov, ONE, 4, rng=(17, i), keep_driving=False).f_values
        rng = np.random.default_rng(19)
        pts = space.points()
        for _ in range(10):
            i, j = rng.integers(0, 40, 2)
            products = vals[:, i] * vals[:, j]
            target = cov.C(pts[i], pts[j])
            se = products.std(ddof=1) / np.sqrt(reps)
            assert abs(products.mean() - target) <= 4 * se

    def test_time_consistency(self):
        # Var(B^x(t)) = t at interior times, via the stored driving paths
        space = ParamSpace.interval(4.0, 64)
        cov = SpatialCov.cosine(1.0)
        reps = 4000
        x_basis = cov.basis(space.points()[3:4])[0]
        samples = {0.25: [], 0.5: [], 1.0: []}
        for i in range(reps):
            s = simulate_field(space, cov, ONE, 8, rng=(23, i))
            for t, idx in ((0.25, 2), (0.5, 4), (1.0, 8)):
                samples[t].append(float(s.driving[idx] @ x_basis))
        for t, draw in samples.items():
            var = np.var(draw)
            se = t * np.sqrt(2.0 / reps)
            assert abs(var - t) <= 4 * se

    def test_resolution_guard(self):
        space = ParamSpace.interval(100.0, 10)
        with pytest.raises(ValueError, match="too coarse"):
            simulate_field(space, SpatialCov.cosine(1.0), ONE, 4, rng=1)

    def test_time_grid_guard(self):
        with pytest.raises(ValueError, match="time_n"):
            simulate_field(ParamSpace.interval(5.0, 64), SpatialCov.cosine(1.0), ONE, 1, rng=1)

    def test_field_values_finite_invariant(self):
        s = simulate_field(ParamSpace.circle(2 * np.pi, 128), SpatialCov.cosine(2.0), IDENTITY, 8, rng=29)
        assert np.all(np.isfinite(s.f_values))


class TestFieldExport:
    def test_round_trip(self, tmp_path):
        space = ParamSpace.torus(2 * np.pi, 2 * np.pi, 32)
        cov = SpatialCov.torus_pair(1.0)
        s = simulate_field(space, cov, IDENTITY, 8, rng=31)
        path = tmp_path / "sample.gtfs"
        s.save(path, u_levels=[0.5, 1.0])
        loaded, header = FieldSample.load(path)
        assert np.array_equal(loaded.f_values, s.f_values)
        assert loaded.space == space
        assert header["u_levels"] == [0.5, 1.0]
        assert header["version"] == 1

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"nope" + bytes(32))
        with pytest.raises(ValueError, match="magic"):
            FieldSample.load(path)


class TestEulerChar:
    def _sample(self, values, kind="interval", length=1.0):
        values = np.asarray(values, dtype=float)
        if kind == "torus":
            space = ParamSpace.torus(length, length, values.shape[0])
        elif kind == "circle":
            space = ParamSpace.circle(length, values.shape[0])
        else:
            space = ParamSpace.interval(length, values.shape[0])
        return FieldSample(space=space, time_n=2, f_values=values, seed=0)

    def test_interval_all_below(self):
        s = self._sample(np.zeros(10))
        assert euler_char(s, 1.0) == 0

    def test_interval_all_above(self):
        s = self._sample(np.ones(10))
        assert euler_char(s, 0.5) == 1

    def test_interval_components(self):
        s = self._sample([1, 0, 1, 1, 0, 1, 1, 1, 0, 0])
        assert euler_char(s, 0.5) == 3

    def test_circle_all_above_is_zero(self):
        s = self._sample(np.ones(12), kind="circle")
        assert euler_char(s, 0.5) == 0

    def test_circle_wrapping_run(self):
        # one component that wraps through the seam
        s = self._sample([1, 0, 0, 0, 0, 1], kind="circle")
        assert euler_char(s, 0.5) == 1

    def test_torus_all_above_is_zero(self):
        vals = np.ones((8, 8))
        s = self._sample(vals, kind="torus")
        assert euler_char(s, 0.5) == 0

    def test_torus_single_blob(self):
        vals = np.zeros((8, 8))
        vals[2:5, 3:6] = 1.0
        s = self._sample(vals, kind="torus")
        assert euler_char(s, 0.5) == 1

    def test_torus_ring_has_zero_ec(self):
        # a band around one handle: chi = 0
        vals = np.zeros((8, 8))
        vals[:, 2:5] = 1.0
        s = self._sample(vals, kind="torus")
        assert euler_char(s, 0.5) == 0


class TestLkc:
    def test_interval(self):
        space = ParamSpace.interval(10.0, 50)
        assert np.allclose(lkc(space, SpatialCov.cosine(1.0)), [1.0, 10.0])

    def test_interval_metric_scaling(self):
        space = ParamSpace.interval(10.0, 400)
        assert np.allclose(lkc(space, SpatialCov.cosine(2.0)), [1.0, 20.0])

    def test_circle_euler_characteristic_zero(self):
        space = ParamSpace.circle(2 * np.pi, 64)
        out = lkc(space, SpatialCov.cosine(1.0))
        assert out[0] == 0.0

    def test_torus_area_scaling(self):
        space = ParamSpace.torus(2 * np.pi, 2 * np.pi, 32)
        cov = SpatialCov.torus_pair(2.0 * np.sqrt(2.0))  # lambda2 = 4
        out = lkc(space, cov)
        assert np.allclose(out, [0.0, 0.0, (2 * np.pi) ** 2 * 4.0])


class TestEcMc:
    def test_reps_floor(self):
        with pytest.raises(ValueError, match="reps"):
            ec_mc(ParamSpace.interval(5.0, 64), SpatialCov.cosine(1.0), ONE, 0.0, 4, 50, rng=1)

    def test_extreme_levels(self):
        space = ParamSpace.interval(5.0, 64)
        cov = SpatialCov.cosine(1.0)
        low = ec_mc(space, cov, ONE, -30.0, 4, 100, rng=37)
        high = ec_mc(space, cov, ONE, 30.0, 4, 100, rng=41)
        assert low == EcEstimate(1.0, 0.0, 100)
        assert high == EcEstimate(0.0, 0.0, 100)

    def test_gaussian_interval_closed_form(self):
        space = ParamSpace.interval(10.0, 400)
        cov = SpatialCov.cosine(1.0)
        est = ec_mc(space, cov, ONE, 1.0, 8, 1500, rng=43)
        target = gaussian_tail(1.0) + 10.0 / (2 * np.pi) * np.exp(-0.5)
        assert abs(est.mean - target) <= 3 * est.stderr

    def test_grid_stability(self):
        cov = SpatialCov.cosine(1.0)
        coarse = ec_mc(ParamSpace.interval(10.0, 200), cov, ONE, 1.0, 8, 800, rng=47)
        fine = ec_mc(ParamSpace.interval(10.0, 400), cov, ONE, 1.0, 8, 800, rng=53)
        assert abs(coarse.mean - fine.mean) <= 2 * np.hypot(coarse.stderr, fine.stderr)

    def test_levels_share_samples_deterministically(self):
        space = ParamSpace.interval(5.0, 64)
        cov = SpatialCov.cosine(1.0)
        multi = ec_mc_levels(space, cov, IDENTITY, [0.0, 1.0], 8, 200, rng=59)
        single = ec_mc(space, cov, IDENTITY, 0.0, 8, 200, rng=59)
        # identical replication substreams: the means agree exactly; the
        # stderr reduction order may differ by a couple of ulps
        assert multi[0].mean == single.mean
        assert multi[0].stderr == pytest.approx(single.stderr, rel=1e-12)
        assert multi[0].reps == single.reps

    def test_worker_independence(self):
        space = ParamSpace.circle(6 * np.pi, 128)
        cov = SpatialCov.cosine(1.0)
        a = ec_mc(space, cov, ONE, 0.5, 4, 200, rng=61)
        b = ec_mc(space, cov, ONE, 0.5, 4, 200, rng=61, workers=3)
        assert a == b


class TestKinematicRhs:
    def test_gaussian_interval(self):
        space = ParamSpace.interval(10.0, 400)
        cov = SpatialCov.cosine(1.0)
        value, se = gkf_rhs(space, cov, ONE, 1.0, 8, 1, 100_000, rng=67)
        target = gaussian_tail(1.0) + (2 * np.pi) ** -0.5 * 10.0 * gaussian_pdf(1.0)
        assert abs(value - target) <= 4 * se

    def test_requires_enough_orders(self):
        space = ParamSpace.torus(2 * np.pi, 2 * np.pi, 64)
        with pytest.raises(ValueError, match="dimension"):
            gkf_rhs(space, SpatialCov.torus_pair(2.0), ONE, 1.0, 8, 1, 20_000, rng=1)

    def test_crofton_index_zero_matches_gkf_bitwise(self):
        space = ParamSpace.interval(10.0, 400)
        cov = SpatialCov.cosine(1.0)
        a = gkf_rhs(space, cov, IDENTITY, 0.5, 16, 1, 20_000, rng=71)
        b = crofton_lkc_rhs(0, space, cov, IDENTITY, 0.5, 16, 1, 20_000, rng=71)
        assert a == b

    def test_crofton_top_index_is_mass_term(self):
        space = ParamSpace.interval(10.0, 400)
        cov = SpatialCov.cosine(1.0)
        from gausstube.cylinder import CylFunctional
        from gausstube.gmf import gmf_surface_mc

        gmfs = gmf_surface_mc(CylFunctional(16, IDENTITY).excursion(0.5), 1, 20_000, rng=73)
        value, se = crofton_lkc_rhs(
            1, space, cov, IDENTITY, 0.5, 16, 1, 20_000, gmfs=gmfs
        )
        top = lkc(space, cov)[1]
        assert value == pytest.approx(top * gmfs.values[0], rel=1e-14)

    def test_crofton_index_validated(self):
        space = ParamSpace.interval(10.0, 400)
        with pytest.raises(ValueError, match="index"):
            crofton_lkc_rhs(2, space, SpatialCov.cosine(1.0), ONE, 0.5, 8, 2, 20_000, rng=1)

    def test_unit_ball_volumes(self):
        assert unit_ball_volume(0) == pytest.approx(1.0)
        assert unit_ball_volume(1) == pytest.approx(2.0)
        assert unit_ball_volume(2) == pytest.approx(np.pi)
        assert unit_ball_volume(3) == pytest.approx(4 * np.pi / 3)

    def test_volume_mc_matches_mass(self):
        space = ParamSpace.interval(10.0, 200)
        cov = SpatialCov.cosine(1.0)
        vol, se = excursion_volume_mc(space, cov, ONE, 1.0, 4, 400, rng=79)
        target = lkc(space, cov)[1] * gaussian_tail(1.0)
        assert abs(vol - target) <= 4 * se


class TestCroftonBoundaryLength:
    @pytest.mark.slow
    def test_index_one_matches_boundary_length_mc(self):
        # E[L_1(A_u)] on the torus against a stereological perimeter
        # estimate: crossing-edge count * spacing is the taxicab length of
        # the digitized boundary, which overestimates an isotropic curve by
        # 4/pi (Cauchy-Crofton), and L_1 is half the induced-metric length.
        space = ParamSpace.torus(2 * np.pi, 2 * np.pi, 400)
        cov = SpatialCov.torus_pair(2.0)
        u, reps = 1.0, 400
        root = np.random.SeedSequence(20_240_777)
        lengths = np.empty(reps)
        for i, child in enumerate(root.spawn(reps)):
            sample = simulate_field(space, cov, ONE, 4, rng=child, keep_driving=False)
            above = sample.f_values >= u
            crossings = int(np.count_nonzero(above != np.roll(above, -1, axis=0)))
            crossings += int(np.count_nonzero(above != np.roll(above, -1, axis=1)))
            taxicab = crossings * space.spacing
            lengths[i] = 0.5 * np.sqrt(cov.lambda2) * (np.pi / 4.0) * taxicab
        lhs = lengths.mean()
        lhs_se = lengths.std(ddof=1) / np.sqrt(reps)
        rhs, rhs_se = crofton_lkc_rhs(
            1, space, cov, ONE, u, 8, 2, 200_000, rng=root.spawn(reps + 1)[-1]
        )
        assert abs(lhs - rhs) <= max(0.10 * rhs, 3 * np.hypot(lhs_se, rhs_se))


class TestAssumptions:
    def test_presets_pass(self):
        validate_assumptions(SpatialCov.cosine(1.0), IDENTITY, rng=83)
        validate_assumptions(SpatialCov.torus_pair(2.0), PotentialV.preset("cubic"), rng=89)

    def test_lying_derivative_caught(self):
        bad = PotentialV(
            value=np.sin,
            d1=np.sin,  # wrong on purpose
            d2=lambda b: -np.sin(b),
            d3=lambda b: -np.cos(b),
            d4=np.sin,
            growth_bound=0,
        )
        with pytest.raises(AssertionError, match="finite differences"):
            validate_assumptions(SpatialCov.cosine(1.0), bad, rng=97)
