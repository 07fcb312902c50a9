import numpy as np
import pytest

from obbo.geometry import DistanceGenerator, FeasibleSet, Regularizer
from obbo.metrics import (
    blr_term,
    build_grid,
    compute_regret_series,
    function_variation,
    hypergradient_error,
    path_variation,
    path_variation_terms,
    variation_report,
)
from obbo.optimizers import ObboConfig, run_obbo
from obbo.problems import DriftSpec, StreamConfig, quadratic_instant, quadratic_stream

EUCLID = DistanceGenerator.euclidean()
ZERO = Regularizer.zero()
FULL = FeasibleSet.full_space()


def make_stream(T=25, drift=None, amp=0.3, seed=21, d1=2, d2=3, kappa=6.0):
    cfg = StreamConfig(
        d1=d1,
        d2=d2,
        T=T,
        kappa_target=kappa,
        drift=drift or DriftSpec.decaying(1.0),
        seed=seed,
        cos_amplitude=amp,
    )
    return quadratic_stream(cfg)


def grid_for(stream, n=64, extra=None):
    d1 = stream[0].d1
    return build_grid(-np.ones(d1), np.ones(d1), n=n, extra=extra)


class TestBlrTerm:
    def test_zero_at_stationary_point(self):
        inst = quadratic_instant(t=1, A=[[2.0]], b=[0.5], Q=[[1.0]], c=[0.5])
        # stationary point of F(lam) = (2 lam)^2 / 2: lam = 0
        term = blr_term([(inst, np.zeros(1))], 0.5, EUCLID, ZERO, FULL, w=1)
        assert term == 0.0

    def test_w1_reduction_is_squared_gradient_norm(self):
        stream = make_stream(T=1)
        lam = np.array([0.3, -0.8])
        term = blr_term([(stream[0], lam)], 0.4, EUCLID, ZERO, FULL, w=1)
        g = stream[0].exact_hypergradient(lam)
        assert term == float(g @ g)

    def test_zero_padding_divides_by_w(self):
        stream = make_stream(T=1)
        lam = np.array([0.3, -0.8])
        term_w1 = blr_term([(stream[0], lam)], 0.4, EUCLID, ZERO, FULL, w=1)
        term_w4 = blr_term([(stream[0], lam)], 0.4, EUCLID, ZERO, FULL, w=4)
        assert term_w4 == pytest.approx(term_w1 / 16.0)


class TestRegretSeries:
    def test_series_identity_under_reduction(self):
        stream = make_stream(T=30)
        config = ObboConfig(alpha=0.05, eta=0.1, K=6, w=5)
        trace = run_obbo(stream, config)
        series = compute_regret_series(stream, trace)
        np.testing.assert_array_equal(series.terms, series.euclidean_terms)
        np.testing.assert_array_equal(series.cumulative, series.euclidean_cumulative)

    def test_series_diverge_with_geometry(self):
        stream = make_stream(T=30)
        config = ObboConfig(alpha=0.05, eta=0.1, K=6, w=5, phi_mode="adaptive")
        trace = run_obbo(stream, config)
        series = compute_regret_series(stream, trace)
        assert not np.allclose(series.terms, series.euclidean_terms)

    def test_terms_nonnegative_finite_cumsum_monotone(self):
        stream = make_stream(T=40, drift=DriftSpec.sublinear(0.5))
        config = ObboConfig(
            alpha=0.05,
            eta=0.1,
            K=6,
            w=4,
            regularizer=Regularizer.l1(0.01),
            feasible=FeasibleSet.box([-2.0, -2.0], [2.0, 2.0]),
            lambda0=np.zeros(2),
        )
        trace = run_obbo(stream, config)
        series = compute_regret_series(stream, trace)
        for arr in (series.terms, series.euclidean_terms):
            assert np.all(arr >= 0.0)
            assert np.all(np.isfinite(arr))
        assert np.all(np.diff(series.cumulative) >= 0.0)

    def test_window_average_uses_historical_iterates(self):
        stream = make_stream(T=6)
        config = ObboConfig(alpha=0.08, eta=0.1, K=5, w=3)
        trace = run_obbo(stream, config)
        series = compute_regret_series(stream, trace)
        t = 4
        expected = (
            stream[t].exact_hypergradient(trace.lambdas[t])
            + stream[t - 1].exact_hypergradient(trace.lambdas[t - 1])
            + stream[t - 2].exact_hypergradient(trace.lambdas[t - 2])
        ) / 3.0
        assert series.euclidean_terms[t] == pytest.approx(float(expected @ expected))


class TestPathVariation:
    def test_static_stream_is_zero(self):
        stream = make_stream(T=15, drift=DriftSpec.static())
        grid = grid_for(stream)
        assert path_variation(stream, 1, grid) == 0.0
        assert path_variation(stream, 2, grid) == 0.0

    def test_quadratic_stream_matches_offset_path(self):
        stream = make_stream(T=40)
        grid = grid_for(stream)
        zero = np.zeros(2)
        offsets = [inst.inner_opt(zero) for inst in stream]
        for p in (1, 2):
            expected = sum(
                np.linalg.norm(offsets[i] - offsets[i - 1]) ** p
                for i in range(1, len(stream))
            )
            got = path_variation(stream, p, grid)
            assert got == pytest.approx(expected, rel=1e-9)

    def test_decaying_drift_p2_partial_sums_bounded(self):
        stream = make_stream(T=120)
        grid = grid_for(stream, n=16)
        terms = path_variation_terms(stream, 2, grid)
        partial = np.cumsum(terms)
        bound = np.cumsum([t ** (-2.0) for t in range(1, 120)])
        assert np.all(partial <= 2.0 * bound + 1e-9)
        assert partial[-1] <= 2.0 * np.pi**2 / 6.0

    def test_sublinear_drift_h2_over_t_decreases(self):
        stream = make_stream(T=300, drift=DriftSpec.sublinear(0.5))
        grid = grid_for(stream, n=8)
        terms = path_variation_terms(stream, 2, grid)
        ratios = [np.sum(terms[: T - 1]) / T for T in (75, 150, 300)]
        assert ratios[2] < ratios[1] < ratios[0]

    def test_missing_oracle_raises(self):
        stream = make_stream(T=3)
        stream[1].inner_opt = None
        with pytest.raises(ValueError):
            path_variation(stream, 1, grid_for(stream))


class TestFunctionVariation:
    def test_static_stream_is_zero(self):
        stream = make_stream(T=10, drift=DriftSpec.static())
        assert function_variation(stream, grid_for(stream)) == 0.0

    def test_pure_offset_shift_sums_exactly(self):
        stream = make_stream(T=12, drift=DriftSpec.static())
        delta = 0.37
        for inst in stream:
            orig = inst.f_value
            inst.f_value = (
                lambda lam, beta, _orig=orig, _t=inst.t: _orig(lam, beta) + _t * delta
            )
        got = function_variation(stream, grid_for(stream))
        assert got == pytest.approx((len(stream) - 1) * delta, rel=1e-12)

    def test_grid_refinement_self_consistency(self):
        stream = make_stream(T=40, amp=0.4)
        coarse = function_variation(stream, grid_for(stream, n=64))
        fine = function_variation(stream, grid_for(stream, n=1024))
        assert abs(coarse - fine) <= 0.05 * fine

    def test_grid_monotonicity(self):
        stream = make_stream(T=25)
        g_small = grid_for(stream, n=16)
        g_large = grid_for(stream, n=256)
        assert function_variation(stream, g_small) <= function_variation(
            stream, g_large
        ) + 1e-12
        assert path_variation(stream, 2, g_small) <= path_variation(
            stream, 2, g_large
        ) + 1e-12

    def test_variation_report_bundles_all(self):
        stream = make_stream(T=20, drift=DriftSpec.sublinear(0.4))
        report = variation_report(stream, grid_for(stream))
        assert report.h1 >= 0 and report.h2 >= 0 and report.v1 >= 0
        assert report.grid.shape[1] == 2


class TestHypergradientError:
    def test_exact_estimator_gives_zero(self):
        stream = make_stream(T=15)
        config = ObboConfig(alpha=0.05, eta=0.1, K=4, w=2, estimator="exact")
        trace = run_obbo(stream, config)
        errs = hypergradient_error(trace, stream)
        np.testing.assert_allclose(errs, 0.0, atol=1e-22)

    def test_itd_error_decays_toward_warm_start_floor(self):
        stream = make_stream(T=60, drift=DriftSpec.static(), amp=0.2)
        # near-zero outer step isolates the warm-start transient: the series
        # must fall monotonically onto a positive floor and then stay there
        config = ObboConfig(alpha=1e-9, eta=0.15, K=4, w=1)
        trace = run_obbo(stream, config)
        errs = hypergradient_error(trace, stream)
        floor = errs[-1]
        assert floor > 0.0
        assert np.all(np.diff(errs[:30]) <= 1e-12)
        assert errs[10] - floor <= (errs[0] - floor) / 50.0
        np.testing.assert_allclose(errs[-10:], floor, rtol=1e-6)

    def test_doubling_k_squares_the_error_floor(self):
        # d2 = 1 keeps a single contraction mode and a near-zero outer step
        # pins lam, so the floor ratio between K and 2K runs is (1 - eta*q)^K
        inst_args = dict(A=[[1.2]], b=[0.3], Q=[[1.0]], c=[-0.4])
        stream_k = [quadratic_instant(t=t, **inst_args) for t in range(1, 41)]
        eta, K = 0.15, 6
        cfg_k = ObboConfig(alpha=1e-9, eta=eta, K=K, w=1)
        cfg_2k = ObboConfig(alpha=1e-9, eta=eta, K=2 * K, w=1)
        err_k = hypergradient_error(run_obbo(stream_k, cfg_k), stream_k)
        err_2k = hypergradient_error(run_obbo(stream_k, cfg_2k), stream_k)
        floor_ratio = np.sqrt(err_2k[-1] / err_k[-1])
        assert floor_ratio == pytest.approx((1.0 - eta) ** K, rel=0.05)

    def test_stream_shorter_than_trace_rejected(self):
        stream = make_stream(T=10)
        trace = run_obbo(stream, ObboConfig(alpha=0.05, eta=0.1, K=3, w=1))
        with pytest.raises(ValueError):
            hypergradient_error(trace, stream[:5])


class TestBuildGrid:
    def test_nested_and_deterministic(self):
        g1 = build_grid([-1.0, 0.0], [1.0, 2.0], n=16)
        g2 = build_grid([-1.0, 0.0], [1.0, 2.0], n=64)
        np.testing.assert_array_equal(g1[:16], g2[:16])

    def test_corners_included_low_dim(self):
        g = build_grid([-1.0, -1.0], [1.0, 1.0], n=8)
        corners = {(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)}
        have = {tuple(row) for row in g}
        assert corners <= have

    def test_extra_points_clipped_to_box(self):
        g = build_grid([0.0], [1.0], n=4, extra=np.array([[2.0], [-1.0]]))
        assert np.all(g >= 0.0) and np.all(g <= 1.0)

    def test_bad_bounds_rejected(self):
        with pytest.raises(ValueError):
            build_grid([1.0], [1.0])
