import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ultrkit import nn
from ultrkit.clicks import ClickNoiseConfig, click_probs, make_curve, sample_click_matrix
from ultrkit.dla import (
    PropensityModel,
    TrainConfig,
    full_information_loss,
    ipw_loss,
    irw_loss,
    list_distribution,
    lr_factor,
    train_dla,
    train_naive,
)
from ultrkit.letor import ConfigError, GenConfig, generate_synthetic
from ultrkit.prod import LinearRanker, rank_dataset
from ultrkit.scorers import Arch, init_scorer

G = np.array([0.6, 0.4])
F = np.array([0.7, 0.3])
SMALL = Arch(mlp_hidden=(8,), d_model=8, n_heads=2, n_blocks=1, ffn_width=8, gru_hidden=8)
NOISE = ClickNoiseConfig(0.1, 4)


@pytest.mark.parametrize("clicks, ipw, irw", [
    ([1, 0], -np.log(0.7), -np.log(0.6)),
    ([0, 1], -1.5 * np.log(0.3), -(0.7 / 0.3) * np.log(0.4)),
])
def test_hand_values(clicks, ipw, irw):
    c = np.array([clicks], dtype=float)
    assert ipw_loss(c, F[None], G)[0][0] == pytest.approx(ipw, abs=1e-12)
    assert irw_loss(c, F[None], G)[0][0] == pytest.approx(irw, abs=1e-12)


def test_rounded_hand_values():
    c = np.array([[0.0, 1.0]])
    assert round(float(ipw_loss(np.array([[1.0, 0]]), F[None], G)[0][0]), 4) == 0.3567
    assert round(float(ipw_loss(c, F[None], G)[0][0]), 4) == 1.8060
    assert round(float(irw_loss(np.array([[1.0, 0]]), F[None], G)[0][0]), 4) == 0.5108
    # (0.7/0.3) * -log(0.4) = 2.13801...; a quoted 2.1383 does not follow from the formula
    assert round(float(irw_loss(c, F[None], G)[0][0]), 4) == 2.1380


def test_no_clicks():
    c = np.zeros((1, 2))
    for fn in (ipw_loss, irw_loss):
        loss, grad = fn(c, F[None], G)
        assert loss[0] == 0 and np.all(grad == 0)


def test_shape_mismatch():
    with pytest.raises(nn.ShapeError):
        ipw_loss(np.zeros((1, 3)), F[None], G)


def test_weight_cap():
    f = np.array([[0.999, 0.001]])
    loss, _ = irw_loss(np.array([[0.0, 1.0]]), f, G, cap=100.0)
    assert loss[0] == pytest.approx(-100.0 * np.log(0.4))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_gradients_match_finite_differences(n, seed):
    rng = np.random.default_rng(seed)
    clicks = (rng.random((2, n)) < 0.5).astype(float)
    s, logits = rng.standard_normal((2, n)), rng.standard_normal(n)

    def ipw(z):
        return ipw_loss(clicks, list_distribution(z), list_distribution(logits))

    def irw(z):
        # the F_1/F_i weights stay fixed while G moves
        return irw_loss(clicks, list_distribution(s), list_distribution(z))

    for fn, base in ((ipw, s), (irw, np.tile(logits, (2, 1)))):
        _, grad = fn(base)
        h = 1e-6
        for j in range(n):
            e = np.zeros_like(base)
            e[..., j] = h
            num = (fn(base + e)[0] - fn(base - e)[0]) / (2 * h)
            if fn is ipw:
                np.testing.assert_allclose(grad[:, j], num, atol=1e-6)
            else:
                np.testing.assert_allclose(grad[:, j], num, atol=1e-6)


def unbiasedness_gap(n_draws, seed):
    curve = make_curve("inverse_power", 1.0, 5)
    labels = np.array([2, 4, 0, 3, 1])
    f = list_distribution(np.array([0.3, 1.2, -0.5, 0.8, 0.0]))
    g_true = curve.probs / curve.probs.sum()  # G_1/G_i equals rho_1/rho_i
    clicks = sample_click_matrix(np.tile(labels, (n_draws, 1)), curve, NOISE, np.random.default_rng(seed))
    mc = ipw_loss(clicks, np.tile(f, (n_draws, 1)), g_true)[0].mean()
    _, p_rel = click_probs(labels, curve, NOISE)
    full = full_information_loss(p_rel, f)
    return abs(mc - full) / full


def test_ipw_unbiased_with_true_propensities():
    assert unbiasedness_gap(100_000, 0) < 0.02


def test_naive_weights_are_biased():
    curve = make_curve("inverse_power", 1.0, 5)
    labels = np.array([2, 4, 0, 3, 1])
    f = list_distribution(np.array([0.3, 1.2, -0.5, 0.8, 0.0]))
    clicks = sample_click_matrix(np.tile(labels, (50_000, 1)), curve, NOISE, np.random.default_rng(0))
    mc = ipw_loss(clicks, np.tile(f, (50_000, 1)), np.full(5, 0.2))[0].mean()
    _, p_rel = click_probs(labels, curve, NOISE)
    assert abs(mc - full_information_loss(p_rel, f)) / full_information_loss(p_rel, f) > 0.2


def test_propensity_model_roundtrip(tmp_path):
    m = PropensityModel(4)
    m.params["propensity.logits"][...] = [0.0, -0.5, -1.0, -2.0]
    np.testing.assert_allclose(m.inverse_ratios(), np.exp([0, 0.5, 1.0, 2.0]))
    m.save(tmp_path / "p.txt")
    np.testing.assert_array_equal(PropensityModel.load(tmp_path / "p.txt").logits, m.logits)


def test_lr_schedule():
    assert lr_factor("constant", 50, 100) == 1.0
    assert lr_factor("linear", 1, 100) == 1.0
    assert lr_factor("linear", 100, 100) == pytest.approx(0.01)


@pytest.fixture(scope="module")
def lists():
    ds = generate_synthetic(GenConfig(n_queries=40, docs_per_query=6, feature_dim=5), seed=0)
    ranker = LinearRanker(np.linspace(-1, 1, 5))
    return rank_dataset(ranker, ds, seed=0)


def cfg(**kw):
    base = dict(kind="univariate_mlp", arch=SMALL, batch_size=8, steps=30, list_size=6, eval_interval=10,
                learning_rate_S=0.1, learning_rate_E=0.1)
    base.update(kw)
    return TrainConfig(**base)


CURVE = make_curve("inverse_power", 1.0, 10)


def test_zero_steps_returns_initial_models(lists):
    res = train_dla(lists, CURVE, NOISE, cfg(steps=0))
    assert res.scorer.params.state_equal(init_scorer("univariate_mlp", SMALL, 5, 0).params)
    assert np.all(res.propensity.logits == 0)
    assert [h["step"] for h in res.history] == [0]


@pytest.mark.parametrize("kind", ["univariate_mlp", "set_attention", "sequence_gru:rand"])
def test_training_is_deterministic(lists, kind):
    a = train_dla(lists, CURVE, NOISE, cfg(kind=kind), valid_lists=lists[:5])
    b = train_dla(lists, CURVE, NOISE, cfg(kind=kind), valid_lists=lists[:5])
    assert a.scorer.params.state_equal(b.scorer.params)
    assert np.array_equal(a.propensity.logits, b.propensity.logits)
    assert a.history_csv() == b.history_csv()


def test_history_rows(lists):
    res = train_dla(lists, CURVE, NOISE, cfg(steps=25), valid_lists=lists[:5])
    assert [h["step"] for h in res.history] == [0, 10, 20, 25]
    assert res.history_csv().splitlines()[0] == "step,loss_S,loss_E,mse_propen,valid_ndcg10"
    assert res.history[0]["mse_propen"] == pytest.approx(np.mean((1 - np.arange(1, 7)) ** 2))


def test_modes_and_replay(lists):
    alt = train_dla(lists, CURVE, NOISE, cfg(update_mode="alternating", steps=2))
    sim = train_dla(lists, CURVE, NOISE, cfg(steps=2))
    assert not alt.scorer.params.state_equal(sim.scorer.params)
    rep = train_dla(lists, CURVE, NOISE, cfg(click_log_size=50, lr_schedule="linear"))
    assert np.all(np.isfinite(rep.propensity.logits))


def test_naive_has_no_propensity(lists):
    res = train_naive(lists, CURVE, NOISE, cfg())
    assert res.propensity is None and res.history[-1]["mse_propen"] is None


def test_frozen_uniform_propensity_reduces_to_naive(lists):
    # the paired design: same seed means same init, batches and clicks
    dla = train_dla(lists, CURVE, NOISE, cfg(steps=30, learning_rate_E=0.0))
    naive = train_naive(lists, CURVE, NOISE, cfg(steps=30, learning_rate_E=0.0))
    assert dla.scorer.params.state_equal(naive.scorer.params)


def test_uniform_curve_keeps_ratios_near_one(lists):
    res = train_dla(lists, make_curve("inverse_power", 0.0, 10), NOISE, cfg(steps=200))
    assert np.all(np.abs(res.propensity.inverse_ratios() - 1) < 0.5)


@pytest.mark.parametrize("kw", [dict(list_size=20), dict(batch_size=0), dict(steps=-1),
                                dict(update_mode="sideways"), dict(lr_schedule="cosine")])
def test_config_errors(lists, kw):
    with pytest.raises(ConfigError):
        train_dla(lists, CURVE, NOISE, cfg(**kw))
