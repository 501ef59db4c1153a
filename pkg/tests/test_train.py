import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polarbp.bp import DecoderConfig, WeightSet, decode, g_minsum
from polarbp.polar import construct_code
from polarbp.quantize import QuantConfig
from polarbp.train import (EPS, GradientSet, History, RmsState, TrainConfig, backward,
                           ber_per_snr, cross_entropy_loss, forward, generate_dataset,
                           loss_and_grad_output, loss_and_gradient, rmsprop_step, train)

SMALL = dict(snr_grid_db=(1.0, 3.0), frames_per_snr_train=600, frames_per_snr_val=300,
             batch_size=200, epochs=3, learning_rate=0.01)


def test_cross_entropy_examples():
    assert cross_entropy_loss([0, 0, 0], [0.5] * 3) == pytest.approx(math.log(2))
    assert cross_entropy_loss([0, 1], [EPS, 1 - EPS]) == pytest.approx(0, abs=1e-10)
    assert cross_entropy_loss([1, 0], [0.8, 0.3]) == pytest.approx(-(math.log(0.8) + math.log(0.7)) / 2)
    assert cross_entropy_loss([1, 0], [0.8, 0.3]) == pytest.approx(0.2899, abs=1e-4)
    with pytest.raises(ValueError):
        cross_entropy_loss([1, 0, 1], [0.5, 0.5])


def test_single_butterfly_closed_form():
    code = construct_code(2, 1)
    cfg = DecoderConfig(T=1, frozen_llr=2.0)
    a, b, f = 1.2, -0.7, 2.0
    w = WeightSet("shared", 2, [[0.9, 1.1]], [[1.3, 0.8]])
    u = np.array([[0.0, 1.0]])
    loss, grads = loss_and_gradient(np.array([[a, b]]), u, code, w, cfg)
    d0 = 0.9 * g_minsum(a, b) + f
    d1 = 1.1 * g_minsum(f, a) + b
    o0, o1 = 1 / (1 + math.exp(d0)), 1 / (1 + math.exp(d1))
    assert loss == pytest.approx(-(math.log(1 - o0) + math.log(o1)) / 2)
    np.testing.assert_allclose(grads.d_alpha, [[(0 - o0) / 2 * g_minsum(a, b),
                                                (1 - o1) / 2 * g_minsum(f, a)]], rtol=1e-12)
    assert not grads.d_beta.any()


def test_zero_llrs_give_zero_gradient(code8):
    w = WeightSet.ones("shared", 8)
    _, g = loss_and_gradient(np.zeros((4, 8)), np.zeros((4, 8)), code8, w, DecoderConfig(T=3))
    assert not g.d_alpha.any() and not g.d_beta.any()


def _numeric_grad(llr, u, code, w, cfg, h=1e-4):
    out = []
    for arr in ("alpha", "beta"):
        base = getattr(w, arr)
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for sgn in (1, -1):
                wp = w.copy()
                getattr(wp, arr)[idx] += sgn * h
                grid, _ = forward(llr, code, wp, cfg)
                vals.append(loss_and_grad_output(grid, u)[0])
            grad[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(grad)
    return out


@pytest.mark.parametrize("mode", ["shared", "per_iteration"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(code8, mode, seed):
    r = np.random.default_rng(seed)
    cfg = DecoderConfig(T=2)
    w = WeightSet.ones(mode, 8, 2)
    w.alpha[...] = r.uniform(0.5, 1.5, w.alpha.shape)
    w.beta[...] = r.uniform(0.5, 1.5, w.beta.shape)
    llr = r.normal(1.0, 2.0, (1, 8))
    u = r.integers(0, 2, (1, 8)).astype(float)
    u[:, code8.frozen_index] = 0
    _, g = loss_and_gradient(llr, u, code8, w, cfg)
    na, nb = _numeric_grad(llr, u, code8, w, cfg)
    np.testing.assert_allclose(g.d_alpha, na, rtol=1e-3, atol=1e-8)
    np.testing.assert_allclose(g.d_beta, nb, rtol=1e-3, atol=1e-8)


@pytest.mark.parametrize("mode", ["shared", "per_iteration"])
def test_compiled_and_array_routes_agree(code64, mode):
    tcfg = TrainConfig(**{**SMALL, "frames_per_snr_train": 150})
    data = generate_dataset(code64, tcfg)
    r = np.random.default_rng(4)
    w = WeightSet.ones(mode, 64, 5)
    w.alpha[...] = r.uniform(0.6, 1.4, w.alpha.shape)
    w.beta[...] = r.uniform(0.6, 1.4, w.beta.shape)
    cfg = DecoderConfig(T=5)
    l1, g1 = loss_and_gradient(data.llrs, data.u, code64, w, cfg, compiled=True)
    l2, g2 = loss_and_gradient(data.llrs, data.u, code64, w, cfg, compiled=False, chunk=64)
    assert l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(g1.d_alpha, g2.d_alpha, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(g1.d_beta, g2.d_beta, rtol=1e-9, atol=1e-15)


def test_backward_errors(code8):
    cfg = DecoderConfig(T=2)
    grid, hist = forward(np.ones((1, 8)), code8, WeightSet.ones("shared", 8), cfg)
    _, dD = loss_and_grad_output(grid, np.zeros((1, 8)))
    with pytest.raises(ValueError):
        backward(hist, WeightSet.ones("unweighted", 8), dD)
    with pytest.raises(ValueError):
        backward(History([hist.L[0]], [], 30.0), WeightSet.ones("shared", 8), dD)
    with pytest.raises(ValueError):
        loss_and_gradient(np.ones((1, 8)), np.zeros((1, 8)), code8, WeightSet.ones("unweighted", 8), cfg)


def test_rmsprop_examples():
    cfg = TrainConfig(learning_rate=1e-3, rms_decay=0.9, rms_epsilon=1e-8)
    w = WeightSet("shared", 2, [[1.0, 1.0]], [[1.0, 1.0]])
    state = RmsState.zeros_like(w)
    g = GradientSet(np.array([[1.0, 0.0]]), np.zeros((1, 2)))
    rmsprop_step(w, g, state, cfg)
    assert state.s_alpha[0, 0] == pytest.approx(0.1)
    step1 = 1.0 - w.alpha[0, 0]
    assert step1 == pytest.approx(0.001 / math.sqrt(0.1), rel=1e-6)
    assert w.alpha[0, 1] == 1.0 and np.all(w.beta == 1.0)
    before = w.alpha[0, 0]
    rmsprop_step(w, g, state, cfg)
    assert 0 < before - w.alpha[0, 0] < step1
    assert np.all(state.s_alpha >= 0) and np.all(state.s_beta >= 0)
    with pytest.raises(ValueError):
        rmsprop_step(w, GradientSet(np.zeros((2, 2)), np.zeros((1, 2))), state, cfg)


def test_gradient_clipping_bounds_update():
    cfg = TrainConfig(grad_clip=1.0)
    w = WeightSet("shared", 2, [[1.0, 1.0]], [[1.0, 1.0]])
    state = RmsState.zeros_like(w)
    rmsprop_step(w, GradientSet(np.array([[1e6, 0.0]]), np.zeros((1, 2))), state, cfg)
    assert state.s_alpha[0, 0] == pytest.approx(0.1)


def test_config_validation():
    for bad in (dict(batch_size=0), dict(learning_rate=0), dict(rms_decay=1.0), dict(grad_clip=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_dataset_sizes_and_determinism(code64):
    tcfg = TrainConfig()
    data = generate_dataset(code64, tcfg)
    assert len(data) == 240_000
    assert len(list(data.batches(tcfg.batch_size))) == 100
    assert sorted(np.unique(data.snr_db).tolist()) == [0, 1, 2, 3, 4, 5]
    small = TrainConfig(**SMALL)
    a, b = generate_dataset(code64, small), generate_dataset(code64, small)
    assert np.array_equal(a.llrs, b.llrs) and np.array_equal(a.messages, b.messages)
    c = generate_dataset(code64, small, "val")
    assert not np.array_equal(a.llrs[:300], c.llrs[:300])
    assert np.array_equal(a.u[:, code64.info_index], a.messages)


def test_zero_epochs_is_minsum(code64):
    res = train(code64, DecoderConfig(T=5), TrainConfig(**{**SMALL, "epochs": 0}))
    assert np.all(res.weights.alpha == 1) and np.all(res.weights.beta == 1)
    tcfg = TrainConfig(**SMALL)
    val = generate_dataset(code64, tcfg, "val")
    assert np.array_equal(decode(val.llrs, code64, res.weights), decode(val.llrs, code64))
    cfg = DecoderConfig(T=5)
    assert (ber_per_snr(val, code64, res.weights, cfg, tcfg.snr_grid_db)
            == ber_per_snr(val, code64, WeightSet.ones("unweighted", 64), cfg, tcfg.snr_grid_db))


@pytest.mark.parametrize("mode", ["shared", "per_iteration"])
def test_training_lowers_loss_and_is_reproducible(code64, mode):
    tcfg = TrainConfig(**SMALL)
    a = train(code64, DecoderConfig(T=5), tcfg, mode)
    b = train(code64, DecoderConfig(T=5), tcfg, mode)
    assert a.metrics[-1].mean_loss < a.metrics[0].mean_loss
    assert np.array_equal(a.weights.alpha, b.weights.alpha)
    assert np.array_equal(a.weights.beta, b.weights.beta)
    assert a.to_csv(tcfg.snr_grid_db).splitlines()[0] == "epoch,mean_loss,val_ber_1dB,val_ber_3dB"
    assert len(a.to_csv(tcfg.snr_grid_db).splitlines()) == 4


def test_quantization_aware_training(code64):
    res = train(code64, DecoderConfig(T=5), TrainConfig(**{**SMALL, "epochs": 2}), "shared",
                QuantConfig(4, 3))
    w = res.weights
    assert w.quantized and len(w.codebook) <= 8
    assert np.array_equal(np.asarray(w.codebook)[w.alpha_idx], w.alpha)
    assert np.array_equal(np.asarray(w.codebook)[w.beta_idx], w.beta)


def test_train_rejects_unweighted(code8):
    with pytest.raises(ValueError):
        train(code8, DecoderConfig(T=2), TrainConfig(**SMALL), "unweighted")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_shared_gradient_is_sum_of_iteration_gradients(seed):
    # shared weights are the per-iteration weights tied together
    code = construct_code(8, 4)
    r = np.random.default_rng(seed)
    cfg = DecoderConfig(T=3)
    shared = WeightSet.ones("shared", 8)
    shared.alpha[...] = r.uniform(0.5, 1.5, shared.alpha.shape)
    shared.beta[...] = r.uniform(0.5, 1.5, shared.beta.shape)
    tied = WeightSet("per_iteration", 8, np.stack([shared.alpha] * 3), np.stack([shared.beta] * 3))
    llr = r.normal(1.0, 2.0, (5, 8))
    u = np.zeros((5, 8))
    l1, g1 = loss_and_gradient(llr, u, code, shared, cfg)
    l2, g2 = loss_and_gradient(llr, u, code, tied, cfg)
    assert l1 == l2
    np.testing.assert_allclose(g1.d_alpha, g2.d_alpha.sum(axis=0), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(g1.d_beta, g2.d_beta.sum(axis=0), rtol=1e-12, atol=1e-15)
