import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocdci.calibration import rep_rng
from ocdci.detector import DetectorConfig, Variant
from ocdci.grid import ScaleGrid
from ocdci.inference import InferenceConfig, run_ocd_ci
from ocdci.simulation import (
    ChangeScenario,
    ExperimentReport,
    RunRecord,
    ScenarioSpec,
    Shape,
    default_horizon,
    effective_support,
    run_coverage_experiment,
    run_support_experiment,
    sample_signal,
    write_csv,
)


# -- signals --------------------------------------------------------------------


def test_harmonic_shape():
    theta = sample_signal(3, 2, math.sqrt(5), Shape.HARMONIC)
    np.testing.assert_allclose(theta, [2.0, 1.0, 0.0], rtol=1e-15)


def test_uniform_shape():
    np.testing.assert_allclose(sample_signal(4, 3, math.sqrt(3), "uniform"), [1, 1, 1, 0], rtol=1e-15)


def test_inv_sqrt_shape():
    theta = sample_signal(5, 4, 1.0, Shape.INV_SQRT)
    ratio = theta[:4] / theta[0]
    np.testing.assert_allclose(ratio, [1, 2**-0.5, 3**-0.5, 0.5], rtol=1e-14)


@given(st.integers(1, 50), st.integers(0, 10_000), st.floats(0.1, 10))
@settings(max_examples=100, deadline=None)
def test_sphere_shape(s, seed, vartheta):
    p = 50
    theta = sample_signal(p, s, vartheta, Shape.SPHERE_UNIFORM, np.random.default_rng(seed))
    assert np.count_nonzero(theta) == s
    assert np.linalg.norm(theta) == pytest.approx(vartheta, rel=1e-12)


@pytest.mark.parametrize("args", [(4, 0, 1.0, "uniform"), (4, 5, 1.0, "uniform"), (4, 2, 0.0, "uniform"), (4, 2, 1.0, "explicit")])
def test_signal_validation(args):
    with pytest.raises(ValueError):
        sample_signal(*args)


def test_stream_means_before_and_after_change():
    reps, z, p = 4000, 3, 4
    theta = np.array([1.0, -0.5, 0.0, 2.0])
    scen = ChangeScenario(z, theta)
    rows = np.empty((reps, 6, p))
    for r in range(reps):
        rows[r] = next(scen.stream(rep_rng(0, r), chunk=6))
    tol = 4 / math.sqrt(reps)
    np.testing.assert_allclose(rows[:, :z].mean(axis=0), 0.0, atol=tol)
    np.testing.assert_allclose(rows[:, z:].mean(axis=0), np.broadcast_to(theta, (6 - z, p)), atol=tol)


def test_stream_change_across_chunk_boundary():
    theta = np.array([100.0, 100.0])
    gen = ChangeScenario(5, theta).stream(np.random.default_rng(0), chunk=3)
    X = np.concatenate([next(gen) for _ in range(4)])
    assert np.all(X[:5] < 50) and np.all(X[5:] > 50)


# -- effective support ----------------------------------------------------------


def test_effective_support_single_coordinate():
    rep = effective_support([1.0, 0.0], ScaleGrid(2, 1.0))
    assert rep.s_eff == 1 and rep.support == (0,) and rep.support_beta == (0,)


def test_effective_support_all_equal():
    # p = 8: the s = 1 threshold sqrt(8 / 4) exceeds 1, the s = 2 threshold equals it exactly
    rep = effective_support(np.ones(8), ScaleGrid(8, 1.0))
    assert rep.s_eff == 2
    assert rep.support == tuple(range(8))


def test_effective_support_spread_signal():
    # eight equal coordinates among p = 64: threshold sqrt(8 / (7 s)) drops below 1 once s >= 2
    theta = np.zeros(64)
    theta[:8] = 1.0
    rep = effective_support(theta, ScaleGrid(64, 1.0))
    assert rep.s_eff == 2
    assert rep.support == tuple(range(8))
    theta = np.zeros(64)
    theta[:40] = 1.0  # sqrt(40 / (7 s)) <= 1 needs s >= 40 / 7, so s = 8
    rep = effective_support(theta, ScaleGrid(64, 1.0))
    assert rep.s_eff == 8 and len(rep.support) == 40


def test_effective_support_zero_vector():
    with pytest.raises(ValueError):
        effective_support(np.zeros(3), ScaleGrid(3, 1.0))


@given(st.integers(0, 5000), st.integers(2, 40), st.floats(0.05, 1.0))
@settings(max_examples=200, deadline=None)
def test_effective_support_within_beta_support(seed, p, frac):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(p) * (rng.random(p) < 0.5)
    if not theta.any():
        theta[0] = 1.0
    beta = frac * np.linalg.norm(theta)
    rep = effective_support(theta, ScaleGrid(p, beta))
    assert set(rep.support) <= set(rep.support_beta)
    assert len(rep.support) >= rep.s_eff


# -- reports --------------------------------------------------------------------


def test_report_from_single_record():
    rep = ExperimentReport.from_records([RunRecord(N=110, covered=True, length=14, fp_free=True)], z=100)
    assert (rep.reps, rep.censored, rep.coverage, rep.mean_ci_length, rep.mean_delay) == (1, 0, 1.0, 14.0, 10.0)
    assert rep.false_alarm_rate == 0.0 and rep.support_fp_free_rate == 1.0


def test_report_censoring():
    recs = [RunRecord(N=None), RunRecord(N=50, covered=False, length=3, false_alarm=True), RunRecord(N=120, covered=True, length=30)]
    rep = ExperimentReport.from_records(recs, z=100)
    assert rep.censored == 1 and rep.coverage == 0.5 and rep.false_alarm_rate == 0.5
    assert rep.mean_delay == 20.0


def test_csv_output():
    rep = ExperimentReport.from_records([RunRecord(N=2, covered=True, length=2)], z=1)
    buf = io.StringIO()
    text = write_csv([rep.row() | {"label": "x"}], buf)
    assert buf.getvalue() == text
    header, row = text.strip().split("\n")
    assert header.startswith("reps,censored,coverage") and header.endswith(",label")
    assert row.startswith("1,0,1,")


def test_default_horizon():
    assert default_horizon(1000, 100, 2, 2.0, 4.0) == 1000 + 50 * 2
    assert default_horizon(0, 2, 1, 0.1, 1.0) == 50 * math.ceil(2 / 0.01)


# -- experiment runners ---------------------------------------------------------


def small_setup(variant=Variant.OCD):
    grid = ScaleGrid(10, 1.0)
    return grid, DetectorConfig(grid, 1.5, 8.0, 25.0, variant)


def test_single_rep_matches_manual_run():
    grid, det = small_setup()
    spec = ScenarioSpec(10, 2, 2.0, 100)
    inf = InferenceConfig(1.0)
    rep = run_coverage_experiment(spec, det, inf, reps=1, seed=5)
    rng = rep_rng(5, 0)
    theta = spec.draw(rng)
    res = run_ocd_ci(ChangeScenario(100, theta).stream(rng, 256), det, inf)
    assert rep.coverage == float(res.covers(100))
    assert rep.mean_ci_length == res.length
    assert rep.false_alarm_rate == float(res.anchor.N <= 100)


def test_zero_changepoint_never_false_alarm():
    _, det = small_setup()
    rep = run_coverage_experiment(ScenarioSpec(10, 3, 3.0, 0), det, InferenceConfig(1.0), reps=20, seed=1)
    assert rep.false_alarm_rate == 0.0


def test_coverage_experiment_is_reproducible_across_threads():
    _, det = small_setup(Variant.OCD_PRIME)
    spec = ScenarioSpec(10, 2, 1.5, 200)
    inf = InferenceConfig(1.0, ell=4)
    r1 = run_coverage_experiment(spec, det, inf, reps=16, seed=2)
    r2 = run_coverage_experiment(spec, det, inf, reps=16, seed=2, threads=4)
    assert write_csv([r1.row()]) == write_csv([r2.row()])


def test_censoring_when_horizon_too_short():
    _, det = small_setup()
    rep = run_coverage_experiment(ScenarioSpec(10, 1, 0.1, 500), det, InferenceConfig(1.0), reps=5, seed=0, horizon=3)
    assert rep.censored == 5 and math.isnan(rep.coverage)


def test_support_sweep_extremes():
    grid, det = small_setup(Variant.OCD_PRIME)
    spec = ScenarioSpec(10, 3, 3.0, 100, Shape.UNIFORM)
    table = run_support_experiment(spec, det, [0.0, 1.0, 1e9], ell=5, reps=20, seed=3)
    assert table.declared == 20
    assert table.fp_free[-1] == 1.0
    assert np.all(np.diff(table.fn_free) <= 0)
    assert table.selection_freq.shape == (3, 10)
    assert table.rows()[0]["d1"] == "0"


def test_support_sweep_rejects_extras_without_prime():
    _, det = small_setup()
    with pytest.raises(ValueError):
        run_support_experiment(ScenarioSpec(10, 2, 2.0, 10), det, [1.0], ell=2)


@pytest.mark.slow
def test_dense_strong_signal_full_containment():
    p = 20
    grid = ScaleGrid(p, 20.0 / math.sqrt(p))
    det = DetectorConfig(grid, math.sqrt(2 * math.log(p)), 12.0, 60.0, Variant.OCD_PRIME)
    spec = ScenarioSpec(p, p, 20.0, 50, Shape.UNIFORM)
    table = run_support_experiment(spec, det, [0.0], ell=20, reps=200, seed=0)
    assert table.fn_free[0] >= 0.95
