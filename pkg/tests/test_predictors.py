import math

import numpy as np
import pytest

from ctconfseq.confseq import ConfidenceState, beta_increment, sample_nll, update
from ctconfseq.forward import Geometry, golden_angles, simulate_step, sparse_plan
from ctconfseq.metrics import psnr
from ctconfseq.phantoms import FAMILIES, make_phantom
from ctconfseq.predictors import (FBPPredictor, JitteredMLEPredictor, MeanPredictor,
                                  MLEPredictor, StaticPredictor, ensemble_predictor, make_predictor,
                                  predict_many, smoothed_predictor)
from ctconfseq.recon import OptimizerConfig, fbp, mle, smooth


def measurements(seed, side=16, n=12, intensity=2e3, family="ellipses"):
    hi = make_phantom(family, 2 * side, seed)
    g = Geometry(side)
    return g, [simulate_step(hi, a, intensity, seed * 131 + t, g) for t, a in enumerate(golden_angles(n))]


def test_fbp_predictor_matches_batch_fbp():
    g, ms = measurements(0)
    p = FBPPredictor(g)
    for t, m in enumerate(ms):
        p.observe(m)
        mix = p.predict()
        assert mix.step == t + 1 and mix.k == 1
        np.testing.assert_allclose(mix.samples[0], fbp(ms[:t + 1], g), atol=1e-12)


def test_mle_predictor_matches_direct_mle():
    g, ms = measurements(1)
    p = MLEPredictor(g)
    for m in ms:
        p.observe(m)
    assert np.array_equal(p.predict().samples[0], mle(ms, fbp(ms, g), OptimizerConfig(), g))


def test_outputs_are_images():
    g, ms = measurements(2)
    for name in ("fbp", "mle", "smoothed_fbp", "smoothed_mle", "ensemble", "ensemble_mean"):
        p = make_predictor(name, g)
        for m in ms[:4]:
            p.observe(m)
        s = p.predict().samples
        assert np.all((s >= 0) & (s <= 1)) and s.shape[1:] == (16, 16)
    with pytest.raises(ValueError):
        make_predictor("unet", g)


def test_identical_seeds_reproduce_member_trajectory():
    g, ms = measurements(3)
    ens = ensemble_predictor(g, [7, 7, 7])
    base = JitteredMLEPredictor(g, 7)
    s_ens, s_base = ConfidenceState.start(0.05, offset=1), ConfidenceState.start(0.05, offset=1)
    ens.observe(ms[0])
    base.observe(ms[0])
    for m in ms[1:]:
        mix = ens.predict()
        assert mix.k == 3 and np.all(mix.samples == mix.samples[0])
        s_ens = update(s_ens, mix, m, g)
        s_base = update(s_base, base.predict(), m, g)
        assert s_ens.beta == s_base.beta
        ens.observe(m)
        base.observe(m)


def test_ensemble_members_distinct_and_sandwich():
    g, ms = measurements(4, intensity=1e5)
    ens = ensemble_predictor(g, list(range(10)))
    for m in ms[:-1]:
        ens.observe(m)
    mix = ens.predict()
    assert mix.k == 10
    assert len({x.tobytes() for x in mix.samples}) == 10
    ells = sample_nll(mix, ms[-1], g)
    inc = beta_increment(mix, ms[-1], g)
    assert ells.min() <= inc <= ells.min() + math.log(10)
    with pytest.raises(ValueError):
        ensemble_predictor(g, [1])


def test_mean_predictor_is_dirac_at_mean():
    g, ms = measurements(5)
    ens = ensemble_predictor(g, [0, 1, 2])
    mean = MeanPredictor(ensemble_predictor(g, [0, 1, 2]))
    for m in ms[:5]:
        ens.observe(m)
        mean.observe(m)
    np.testing.assert_allclose(mean.predict().samples[0], ens.predict().samples.mean(axis=0), atol=1e-15)
    assert mean.predict().k == 1


def test_smoothed_predictor_identity_at_zero():
    g, ms = measurements(6)
    a, b = FBPPredictor(g), smoothed_predictor(FBPPredictor(g), 0.0)
    for m in ms:
        a.observe(m)
        b.observe(m)
    assert np.array_equal(a.predict().samples, b.predict().samples)
    with pytest.raises(ValueError):
        smoothed_predictor(FBPPredictor(g), -0.5)


def test_static_predictor():
    g = Geometry(4)
    imgs = np.random.default_rng(0).random((2, 4, 4))
    p = StaticPredictor(g, imgs)
    assert p.predict().k == 2 and p.predict().step == 0
    np.testing.assert_array_equal(p.predict().samples, imgs)


def test_predict_many_matches_one_by_one():
    fresh, batched = [], []
    for seed in range(4):
        g, ms = measurements(0, n=8)  # shared angle sequence, different predictors
        for group in (fresh, batched):
            group.append([make_predictor("mle", g), ensemble_predictor(g, [seed, seed + 1]),
                          smoothed_predictor(MLEPredictor(g), 0.5), FBPPredictor(g)])
        for p in fresh[-1] + batched[-1]:
            for m in ms:
                p.observe(m)
    flat_b = [p for group in batched for p in group]
    many = predict_many(flat_b)
    single = [p.predict() for group in fresh for p in group]
    for a, b in zip(single, many):
        assert a.step == b.step and np.array_equal(a.samples, b.samples)


def test_smoothing_helps_noisy_fbp():
    side = 32
    plan = sparse_plan(50, 1e5, side, 5)
    g = Geometry(side)
    wins = 0
    for i in range(50):
        hi = make_phantom(FAMILIES[i % 4], 2 * side, i)
        truth = hi.reshape(side, 2, side, 2).mean(axis=(1, 3))
        ms = [simulate_step(hi, a, plan.step_intensity(t), i * 997 + t, g)
              for t, a in enumerate(plan.angles)]
        raw = fbp(ms, g)
        wins += psnr(smooth(raw, 1.0), truth) > psnr(raw, truth)
    assert wins > 25
