import math

import numpy as np
import pytest

from gfflab.extremes import (GROWTH_C, LEVEL1_GAP, LEVEL1_MEAN, MaxStats,
                             ResumeMismatchError, append_result,
                             emax_paired_two_ways, field_max, growth_fit,
                             load_results, mc_max_stats, monotonicity_report,
                             nearest_rank_quantile, render_report,
                             stats_from_maxima, subsequence_detector,
                             tightness_diagnostic)
from gfflab.lattice import BoxSpec, Field
from gfflab.sampling import SeedSpec


def make_stats(n, mean, se=0.01, dh_gap=0.5, dh_se=0.005, samples=10_000,
               quantiles=(-1.0, -0.5, 0.0, 0.5, 1.0)):
    return MaxStats(n, 1 << n, samples, mean, se, se * se * samples,
                    dh_gap, dh_se, *quantiles)


# ---------------------------------------------------------------------------
# field_max
# ---------------------------------------------------------------------------

def test_field_max_all_zero():
    assert field_max(Field.zeros(BoxSpec.from_side(4))) == (0.0, (0, 0))


def test_field_max_single_positive():
    interior = np.full((3, 3), -1.0)
    interior[2, 2] = 2.5  # site (3, 3)
    value, site = field_max(Field.from_interior(BoxSpec.from_side(4), interior))
    assert value == 2.5
    assert site == (3, 3)


def test_field_max_negative_interior_boundary_wins():
    interior = np.full((3, 3), -0.25)
    value, site = field_max(Field.from_interior(BoxSpec.from_side(4), interior))
    assert value == 0.0
    assert site == (0, 0)


def test_field_max_lexicographic_tie_break():
    interior = np.zeros((3, 3))
    interior[0, 1] = 3.0  # site (1, 2)
    interior[1, 0] = 3.0  # site (2, 1): (1, 2) sorts first
    _, site = field_max(Field.from_interior(BoxSpec.from_side(4), interior))
    assert site == (1, 2)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def test_stats_from_maxima_against_numpy():
    rng = np.random.default_rng(0)
    z = np.abs(rng.normal(size=501))
    st = stats_from_maxima(3, z)
    assert st.samples == 501
    assert st.mean_max == pytest.approx(z.mean(), rel=1e-12)
    assert st.var_max == pytest.approx(z.var(ddof=1), rel=1e-12)
    assert st.se_mean == pytest.approx(math.sqrt(st.var_max / 501), rel=1e-14)
    gaps = np.abs(z[0::2][:250] - z[1::2][:250])
    assert st.dh_gap == pytest.approx(gaps.mean(), rel=1e-12)
    centered = np.sort(z - st.mean_max)
    assert st.q50 == centered[math.ceil(0.5 * 501) - 1]
    assert st.quantiles == tuple(sorted(st.quantiles))


def test_nearest_rank_quantile_convention():
    vals = np.arange(1.0, 11.0)
    assert nearest_rank_quantile(vals, 0.25) == 3.0
    assert nearest_rank_quantile(vals, 0.101) == 2.0
    assert nearest_rank_quantile(vals, 1.0) == 10.0


def test_paired_max_identity_machine_precision():
    rng = np.random.default_rng(1)
    a = rng.normal(size=5000) * 3 + 1
    b = rng.normal(size=5000) * 3 + 1
    direct, via_identity = emax_paired_two_ways(a, b)
    assert abs(direct - via_identity) <= 1e-12


def test_max_stats_validation():
    with pytest.raises(ValueError, match="se_mean"):
        MaxStats(1, 2, 100, 0.5, 0.9, 0.01, 0.1, 0.01,
                 -1, -0.5, 0, 0.5, 1)
    with pytest.raises(ValueError, match="nondecreasing"):
        make_stats(1, 0.5, quantiles=(1.0, 0.5, 0.0, -0.5, -1.0))
    with pytest.raises(ValueError, match="negative"):
        make_stats(1, -0.5)


def test_mc_max_stats_level1_closed_forms():
    st = mc_max_stats(1, 20_000, SeedSpec(101))
    assert abs(st.mean_max - LEVEL1_MEAN) <= 3 * st.se_mean
    assert abs(st.dh_gap - LEVEL1_GAP) <= 3 * st.dh_se


def test_mc_max_stats_level1_iqr():
    # q25 of max(xi, 0) is 0 and q75 is the 0.75 normal quantile
    st = mc_max_stats(1, 50_000, SeedSpec(103))
    assert abs((st.q75 - st.q25) - 0.6744897501960817) <= 0.02


def test_mc_max_stats_level2_against_dense_brute_force():
    # independent oracle: dense covariance assembled by neighbor loops,
    # factored with numpy, driven by a PCG64 generator
    side = 4
    sites = [(x, y) for x in range(1, side) for y in range(1, side)]
    index = {s: i for i, s in enumerate(sites)}
    a = np.eye(9)
    for (x, y), i in index.items():
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (x + dx, y + dy)
            if nb in index:
                a[i, index[nb]] -= 0.25
    chol = np.linalg.cholesky(np.linalg.solve(a, np.eye(9)))
    rng = np.random.default_rng(202)
    n = 50_000
    brute = np.maximum(
        (rng.standard_normal((n, 9)) @ chol.T).max(axis=1), 0.0)
    brute_mean = brute.mean()
    brute_se = brute.std(ddof=1) / math.sqrt(n)

    st = mc_max_stats(2, 50_000, SeedSpec(104))
    combined = math.hypot(brute_se, st.se_mean)
    assert abs(st.mean_max - brute_mean) <= 3 * combined


def test_mc_max_stats_worker_invariance():
    a = mc_max_stats(1, 400, SeedSpec(7), workers=1)
    b = mc_max_stats(1, 400, SeedSpec(7), workers=3)
    assert a == b


def test_mc_max_stats_preconditions():
    with pytest.raises(ValueError):
        mc_max_stats(1, 99, SeedSpec(1))
    with pytest.raises(ValueError):
        mc_max_stats(0, 200, SeedSpec(1))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def test_monotonicity_exact_levels():
    lo = make_stats(1, LEVEL1_MEAN, se=0.001, dh_gap=LEVEL1_GAP, dh_se=0.001)
    hi_mean = LEVEL1_MEAN + LEVEL1_GAP / 2 + 0.05
    rep = monotonicity_report([lo, make_stats(2, hi_mean, se=0.001)])
    assert rep.all_ok
    step = rep.steps[0]
    assert step.gap_bound == pytest.approx(LEVEL1_GAP / 2)
    assert step.delta == pytest.approx(hi_mean - LEVEL1_MEAN)


def test_monotonicity_flags_decrease():
    rep = monotonicity_report([make_stats(1, 1.0, se=0.001),
                               make_stats(2, 0.5, se=0.001)])
    assert not rep.steps[0].monotone_ok


def test_monotonicity_flags_gap_violation():
    rep = monotonicity_report([
        make_stats(1, 1.0, se=0.001, dh_gap=1.0, dh_se=0.001),
        make_stats(2, 1.1, se=0.001)])
    assert rep.steps[0].monotone_ok
    assert not rep.steps[0].gap_ok


def test_monotonicity_identical_degenerate_stats_pass():
    st = [make_stats(n, 1.0, se=0.001, dh_gap=0.0, dh_se=0.0)
          for n in (1, 2, 3)]
    assert monotonicity_report(st).all_ok


def test_monotonicity_rejects_gaps():
    with pytest.raises(ValueError, match="consecutive"):
        monotonicity_report([make_stats(3, 1.0), make_stats(5, 1.0)])


def test_detector_constant_means_detects_all():
    st = [make_stats(n, 2.0) for n in (1, 2, 3, 4)]
    rep = subsequence_detector(st, 0.5)
    assert rep.detected == (1, 2, 3)
    assert rep.density == 1.0


def test_detector_fast_growth_detects_none():
    st = [make_stats(n, 2.0 * n) for n in (1, 2, 3, 4)]
    rep = subsequence_detector(st, 1.0)
    assert rep.detected == ()
    assert rep.slope_per_level == pytest.approx(2.0)
    assert rep.violation_density_bound == pytest.approx(2.0)


def test_detector_requires_positive_threshold():
    with pytest.raises(ValueError):
        subsequence_detector([make_stats(1, 1.0), make_stats(2, 1.0)], 0.0)


def test_growth_fit_recovers_exact_model():
    levels = range(5, 10)
    means = [GROWTH_C * (n * math.log(2)) - 0.7 * math.log(n * math.log(2))
             + 0.3 for n in levels]
    st = [make_stats(n, m) for n, m in zip(levels, means)]
    fit = growth_fit(st)
    assert abs(fit.c_hat - GROWTH_C) <= 1e-9
    assert abs(fit.c2_hat - 0.7) <= 1e-9
    assert abs(fit.intercept - 0.3) <= 1e-9
    assert max(abs(r) for r in fit.residuals) <= 1e-9
    # the pinned fit sees the same model with c already removed
    assert abs(fit.pinned_c2 - 0.7) <= 1e-9
    assert abs(fit.pinned_intercept - 0.3) <= 1e-9


def test_growth_fit_reports_residuals_exactly():
    st = [make_stats(n, 1.0 + 0.9 * n) for n in range(5, 10)]
    fit = growth_fit(st)
    log_n = np.array([s.n * math.log(2) for s in st])
    pred = (fit.c_hat * log_n - fit.c2_hat * np.log(log_n) + fit.intercept)
    obs = np.array([s.mean_max for s in st])
    np.testing.assert_allclose(obs - pred, fit.residuals, atol=1e-12)


def test_growth_fit_rejects_degenerate_designs():
    with pytest.raises(ValueError, match="degenerate"):
        growth_fit([make_stats(n, 1.0 * n) for n in (5, 6, 7)])
    with pytest.raises(ValueError, match="degenerate"):
        growth_fit([make_stats(n, 1.0 * n) for n in (5, 6, 7, 8)])


def test_tightness_identical_levels_ratio_one():
    st = [make_stats(n, 1.0 + n) for n in (4, 5, 6)]
    rep = tightness_diagnostic(st)
    assert rep.spread_ratio == pytest.approx(1.0)
    assert rep.iqr_ratio == pytest.approx(1.0)
    assert [r.n for r in rep.rows] == [4, 5, 6]


def test_tightness_requires_three_levels():
    with pytest.raises(ValueError):
        tightness_diagnostic([make_stats(1, 1.0), make_stats(2, 1.0)])


def test_render_report_sections():
    st = [mc_max_stats(1, 200, SeedSpec(1)), mc_max_stats(2, 200, SeedSpec(2))]
    text = render_report(st)
    assert "level table" in text
    assert "level-1 closed forms" in text
    assert "monotonicity" in text
    assert "detector" in text


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_results_round_trip(tmp_path):
    path = tmp_path / "results.csv"
    st1 = mc_max_stats(1, 200, SeedSpec(55))
    st2 = mc_max_stats(2, 200, SeedSpec(55, 1 << 40))
    append_result(path, 55, st1)
    append_result(path, 55, st2)
    seed, loaded = load_results(path)
    assert seed == 55
    assert loaded[1] == st1
    assert loaded[2] == st2
    text = path.read_text().splitlines()
    assert text[0] == "# gfflab-extremes schema=1 seed=55"
    assert text[1].startswith("n,N,samples,mean_max,se_mean,var_max,dh_gap")


def test_append_same_row_is_idempotent(tmp_path):
    path = tmp_path / "results.csv"
    st = mc_max_stats(1, 200, SeedSpec(55))
    append_result(path, 55, st)
    before = path.read_bytes()
    append_result(path, 55, st)
    assert path.read_bytes() == before


def test_append_conflicting_row_rejected(tmp_path):
    path = tmp_path / "results.csv"
    append_result(path, 55, mc_max_stats(1, 200, SeedSpec(55)))
    other = mc_max_stats(1, 300, SeedSpec(55))
    with pytest.raises(ResumeMismatchError):
        append_result(path, 55, other)


def test_append_seed_mismatch_rejected(tmp_path):
    path = tmp_path / "results.csv"
    append_result(path, 55, mc_max_stats(1, 200, SeedSpec(55)))
    with pytest.raises(ResumeMismatchError):
        append_result(path, 56, mc_max_stats(2, 200, SeedSpec(56)))
