import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ctconfseq.confseq import ConfidenceState, MixingDistribution, update
from ctconfseq.experiment.config import RunConfig
from ctconfseq.experiment.intervals import ensemble_samples
from ctconfseq.experiment.runner import run
from ctconfseq.forward import Geometry, Measurement, golden_angles, mean_counts, uniform_angles
from ctconfseq.likelihood import PoissonData
from ctconfseq.metrics import coverage_and_width
from ctconfseq.phantoms import make_phantom
from ctconfseq.uq import (BoundaryConfig, ConfidenceSet, PixelIntervals, WorstCaseConfig,
                          boundary_gradient, boundary_spread, bootstrap_intervals, expansion_direction,
                          nearest_rank, pixel_spread, project_into_set, spread_objective,
                          student_t_intervals, worst_case_intervals)


def small_truth(seed=1, side=8):
    hi = make_phantom("ellipses", 2 * side if 2 * side >= 16 else 16, seed)
    f = hi.shape[0] // side
    return np.clip(hi.reshape(side, f, side, f).mean(axis=(1, 3)), 0.05, 0.95)


def noisy_set(truth, intensity=1e4, n=40, seed=0, slack_image=None):
    g = Geometry(truth.shape[0])
    rng = np.random.default_rng(seed)
    ms = [Measurement(a, intensity, rng.poisson(mean_counts(truth, a, intensity, g)))
          for a in golden_angles(n)]
    data = PoissonData(g, ms)
    centre = truth if slack_image is None else slack_image
    return ConfidenceSet(data, data.nll(centre) + math.log(20.0)), ms


def test_pixel_intervals_validation():
    with pytest.raises(ValueError):
        PixelIntervals(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        PixelIntervals(np.zeros((2, 2)), np.full((2, 2), 1.5))
    iv = PixelIntervals.from_samples(np.array([[[0.2]], [[0.6]]]))
    assert iv.width[0, 0] == pytest.approx(0.4) and iv.half_width[0, 0] == pytest.approx(0.2)
    assert iv.center[0, 0] == pytest.approx(0.4)


def test_config_validation():
    with pytest.raises(ValueError):
        WorstCaseConfig(upper_threshold=1.0)
    with pytest.raises(ValueError):
        BoundaryConfig(diversity_weight=0.0)


def test_from_state_checks_measurements():
    truth = small_truth()
    g = Geometry(8)
    cset, ms = noisy_set(truth)
    state = ConfidenceState.start(0.05, {"truth": truth})
    for t, m in enumerate(ms):
        state = update(state, MixingDistribution.dirac(truth, t), m, g)
    ok = ConfidenceSet.from_state(state, ms, g)
    assert ok.threshold == state.threshold and ok.contains(truth)
    with pytest.raises(ValueError):
        ConfidenceSet.from_state(state, ms[:-1] + ms[:1], g)


def test_projection_noop_inside():
    truth = small_truth()
    cset, _ = noisy_set(truth)
    p = project_into_set(truth, cset)
    assert p.converged and p.steps == 0 and np.array_equal(p.image, truth)


def test_projection_near_feasible():
    truth = small_truth()
    rng = np.random.default_rng(3)
    pred = np.clip(truth + 0.05 * rng.normal(size=truth.shape), 0, 1)
    cset, _ = noisy_set(truth, slack_image=pred)
    p = project_into_set(np.clip(pred + 1e-3 * rng.normal(size=pred.shape), 0, 1), cset)
    assert p.converged and p.steps <= 50 and cset.contains(p.image)


def test_projection_stress_is_honest():
    truth = small_truth(side=16)
    cset, _ = noisy_set(truth, intensity=1e6 / (40 * 16))
    p = project_into_set(1.0 - truth, cset, budget=10000)
    assert p.converged == cset.contains(p.image)
    assert p.nll == pytest.approx(cset.nll(p.image), rel=1e-10)


def test_worst_case_singleton_set():
    truth = small_truth()
    g = Geometry(8)
    ms = [Measurement(a, 1e10, mean_counts(truth, a, 1e10, g)) for a in uniform_angles(40)]
    data = PoissonData(g, ms)
    cset = ConfidenceSet(data, data.nll(truth) + math.log(20.0))
    res = worst_case_intervals(truth, cset, WorstCaseConfig(max_outer_steps=30))
    assert res.intervals.width.max() < 1e-3
    assert res.all_verified


def test_worst_case_needs_noise_to_break_symmetry():
    truth = small_truth()
    cset, _ = noisy_set(truth)
    res = worst_case_intervals(truth, cset, WorstCaseConfig(init_noise=0.0, max_outer_steps=5))
    assert all(s == 0.0 for s in res.spread_history)
    assert np.all(res.intervals.width == 0.0)


def test_worst_case_replicates_verified():
    truth = small_truth(side=16, seed=4)
    cset, _ = noisy_set(truth, intensity=300.0, n=30)
    res = worst_case_intervals(truth, cset, WorstCaseConfig(max_outer_steps=40))
    for z, flag in zip(res.replicates, res.flags):
        assert cset.contains(z) != flag
    cov, width = coverage_and_width(res.intervals, truth)
    assert cov > 0.5 and width > 0.0


@given(seed=st.integers(0, 2**31))
def test_expansion_mask(seed):
    rng = np.random.default_rng(seed)
    z = rng.choice([0.0, 0.0005, 0.5, 0.9995, 1.0], size=(4, 5, 5)) + rng.normal(0, 1e-5, (4, 5, 5))
    z = np.clip(z, 0, 1)
    raw = (z - z[0]) - (z - z[0]).mean(axis=0)
    d = expansion_direction(z)
    blocked = ((z > 0.999) & (raw > 0)) | ((z < 0.001) & (raw < 0))
    assert np.all(d[blocked] == 0.0)
    norms = np.sqrt((d.reshape(4, -1) ** 2).sum(axis=1))
    assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0))


def test_spread_objective():
    z = np.zeros((2, 1, 2))
    z[1, 0, 0] = 2.0
    assert spread_objective(z) == pytest.approx(1.0)


def test_boundary_coincident_samples_fixed():
    truth = small_truth()
    cset, _ = noisy_set(truth)
    out = boundary_spread(np.stack([truth, truth]), cset)
    np.testing.assert_array_equal(out, np.stack([truth, truth]))


def test_boundary_outside_branch_follows_nll_gradient():
    truth = small_truth()
    cset, _ = noisy_set(truth)
    far = 1.0 - truth
    grads, inside = boundary_gradient(np.stack([truth, far]), cset)
    assert inside.tolist() == [True, False]
    assert cset.nll(far) - cset.threshold > 0
    np.testing.assert_allclose(grads[1], cset.data.grad(far) / 2, rtol=1e-12)


@given(seed=st.integers(0, 2**31))
def test_boundary_stays_in_box(seed):
    truth = small_truth()
    cset, _ = noisy_set(truth)
    samples = np.random.default_rng(seed).random((3, 8, 8))
    out = boundary_spread(samples, cset, BoundaryConfig(steps=5, learning_rate=0.5))
    assert np.all((out >= 0) & (out <= 1))


def test_boundary_rejects_single_sample():
    truth = small_truth()
    cset, _ = noisy_set(truth)
    with pytest.raises(ValueError):
        boundary_spread(truth[None], cset)


@pytest.mark.slow
@pytest.mark.parametrize("phantom", [0, 1, 2])
def test_boundary_spreads_ensemble_at_1e6(phantom):
    cfg = RunConfig(mode="sparse", family="ellipses", phantom=phantom, seed=0, side=32,
                    total_intensity=1e6, predictor="mle")
    result = run(cfg)
    cset = ConfidenceSet.from_state(result.final_state, result.confidence_measurements, result.geometry)
    samples = ensemble_samples(result, 8)
    out = boundary_spread(samples, cset)
    assert pixel_spread(out) > pixel_spread(samples)
    assert np.mean([cset.contains(x) for x in out]) >= 0.9


def test_student_t_examples():
    same = np.full((4, 3, 3), 0.3)
    iv = student_t_intervals(same, 0.05)
    assert np.all(iv.lower == 0.3) and np.all(iv.upper == 0.3)
    iv = student_t_intervals(np.array([[[0.4]], [[0.6]]]), 0.05)
    half = stats.t.ppf(0.975, 1) * np.std([0.4, 0.6], ddof=1) / math.sqrt(2)
    assert half == pytest.approx(1.2706, abs=1e-4)
    assert iv.lower[0, 0] == 0.0 and iv.upper[0, 0] == 1.0
    with pytest.raises(ValueError):
        student_t_intervals(same[:1], 0.05)


def test_student_t_calibration():
    rng = np.random.default_rng(0)
    truth = np.full((4, 4), 0.5)
    hits = []
    for _ in range(1000):
        iv = student_t_intervals(truth + rng.normal(0, 0.05, (10, 4, 4)), 0.05)
        hits.append(coverage_and_width(iv, truth)[0])
    assert abs(np.mean(hits) - 0.95) <= 0.02


@given(seed=st.integers(0, 2**31), k=st.integers(2, 12))
def test_student_t_nesting(seed, k):
    s = np.random.default_rng(seed).random((k, 4, 4))
    wide, narrow = student_t_intervals(s, 0.01), student_t_intervals(s, 0.10)
    assert np.all(wide.lower <= narrow.lower) and np.all(wide.upper >= narrow.upper)


def test_nearest_rank():
    assert nearest_rank(1000, 0.025) + 1 == 25
    assert nearest_rank(1000, 0.975) + 1 == 975
    assert nearest_rank(5, 0.0) == 0 and nearest_rank(5, 1.0) == 4


def test_bootstrap_single_measurement_zero_width():
    truth = small_truth()
    _, ms = noisy_set(truth, n=1)
    iv = bootstrap_intervals("fbp", ms, Geometry(8), n_boot=20)
    assert np.all(iv.width == 0.0)


def test_bootstrap_properties():
    truth = small_truth()
    _, ms = noisy_set(truth, intensity=500.0, n=20)
    iv = bootstrap_intervals("fbp", ms, Geometry(8), n_boot=50, seed=3)
    assert np.all(iv.lower <= iv.upper)
    again = bootstrap_intervals("fbp", ms, Geometry(8), n_boot=50, seed=3)
    assert np.array_equal(iv.lower, again.lower)
    with pytest.raises(ValueError):
        bootstrap_intervals("fbp", ms, Geometry(8), n_boot=1)
