import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probinst.errors import EmptyInputError, ShapeMismatchError
from probinst.losses import (ConcreteConfig, ConcreteLayerSpec, DiscriminativeConfig,
                             bernoulli_entropy, concrete_dropout_mask, concrete_regularizer,
                             discriminative_loss, discriminative_loss_grad, semantic_cross_entropy)


def naive_loss(emb, labels, cfg):
    """Direct loop transcription of the three terms."""
    ids = sorted(set(labels.ravel().tolist()) - {0})
    centers = {c: emb[labels == c].mean(axis=0) for c in ids}
    n = len(ids)
    l_var = sum(np.sum((emb[labels == c] - centers[c]) ** 2) / np.sum(labels == c) for c in ids) / n
    l_dist = 0.0
    for a in ids:
        for b in ids:
            if a != b:
                d = np.sum((centers[a] - centers[b]) ** 2)
                if not cfg.hinge_on_squared_norm:
                    d = math.sqrt(d)
                l_dist += max(0.0, 2 * cfg.delta_d - d) ** 2
    if n > 1:
        l_dist /= n * (n - 1)
    l_reg = sum(np.sum(centers[c] ** 2) for c in ids) / n
    return cfg.w_var * l_var + cfg.w_dist * l_dist + cfg.w_reg * l_reg


def central_difference(f, x, step=1e-4):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        g[idx] = (f(xp) - f(xm)) / (2 * step)
    return g


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


def random_case(rng):
    h, w = rng.integers(2, 9, size=2)
    dim = int(rng.integers(1, 5))
    n_inst = int(rng.integers(1, 5))
    labels = rng.integers(0, n_inst + 1, size=(h, w))
    labels.flat[0] = 1
    # spread of 2 keeps some pairs inside and some outside the hinge
    return rng.normal(0.0, 2.0, size=(h, w, dim)), labels


def test_single_instance_constant():
    emb = np.full((2, 3, 2), [1.0, 2.0])
    out = discriminative_loss(emb, np.ones((2, 3), int))
    assert out.l_var == 0 and out.l_dist == 0
    assert out.l_reg == pytest.approx(5.0)


def test_variance_hand_value():
    emb = np.array([[[0.0], [2.0]]])
    out = discriminative_loss(emb, np.array([[1, 1]]))
    assert out.l_var == pytest.approx(1.0)
    np.testing.assert_allclose(out.centers, [[1.0]])


def test_distance_hand_value():
    emb = np.array([[[0.0], [2.0]]])
    out = discriminative_loss(emb, np.array([[1, 2]]))
    assert out.l_dist == pytest.approx(16.0)


def test_distance_hinge_inactive():
    emb = np.array([[[0.0], [3.0]]])
    assert discriminative_loss(emb, np.array([[1, 2]])).l_dist == 0.0


def test_unsquared_variant_hand_value():
    # |0 - 2| = 2, hinge 8 - 2 = 6, two ordered pairs / 2 -> 36
    emb = np.array([[[0.0], [2.0]]])
    cfg = DiscriminativeConfig(hinge_on_squared_norm=False)
    assert discriminative_loss(emb, np.array([[1, 2]]), cfg).l_dist == pytest.approx(36.0)


def test_loss_matches_naive_transcription():
    rng = np.random.default_rng(0)
    for case in range(40):
        emb, labels = random_case(rng)
        cfg = DiscriminativeConfig(hinge_on_squared_norm=bool(case % 2))
        assert discriminative_loss(emb, labels, cfg).total == pytest.approx(naive_loss(emb, labels, cfg))


def test_background_pixels_ignored():
    emb = np.array([[[0.0], [2.0], [100.0]]])
    a = discriminative_loss(emb, np.array([[1, 1, 0]]))
    assert a.l_var == pytest.approx(1.0)
    assert discriminative_loss_grad(emb, np.array([[1, 1, 0]]))[0, 2, 0] == 0.0


def test_loss_errors():
    with pytest.raises(EmptyInputError):
        discriminative_loss(np.zeros((2, 2, 1)), np.zeros((2, 2), int))
    with pytest.raises(ShapeMismatchError):
        discriminative_loss(np.zeros((2, 2, 1)), np.ones((2, 3), int))


def test_gradient_zero_at_stationary_point():
    emb = np.full((3, 3, 2), 0.75)
    cfg = DiscriminativeConfig(w_reg=0.0)
    assert not discriminative_loss_grad(emb, np.ones((3, 3), int), cfg).any()


@pytest.mark.parametrize("squared", [True, False])
def test_gradient_6x6_finite_difference(squared):
    rng = np.random.default_rng(1)
    emb = rng.normal(0, 1.5, size=(6, 6, 3))
    labels = rng.integers(1, 4, size=(6, 6))
    cfg = DiscriminativeConfig(hinge_on_squared_norm=squared)
    fd = central_difference(lambda e: naive_loss(e, labels, cfg), emb)
    assert rel_err(discriminative_loss_grad(emb, labels, cfg), fd) < 1e-5


def test_gradient_linear_in_weights():
    rng = np.random.default_rng(2)
    emb, labels = random_case(rng)
    only_var = DiscriminativeConfig(w_dist=0, w_reg=0)
    double_var = DiscriminativeConfig(w_var=2, w_dist=0, w_reg=0)
    np.testing.assert_allclose(discriminative_loss_grad(emb, labels, double_var),
                               2 * discriminative_loss_grad(emb, labels, only_var))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_translation_invariance(seed, shift):
    emb, labels = random_case(np.random.default_rng(seed))
    a = discriminative_loss(emb, labels)
    b = discriminative_loss(emb + shift, labels)
    assert b.l_var == pytest.approx(a.l_var, rel=1e-6, abs=1e-6)
    assert b.l_dist == pytest.approx(a.l_dist, rel=1e-6, abs=1e-6)
    assert min(a.l_var, a.l_dist, a.l_reg) >= 0


def test_semantic_cross_entropy_gradient():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(3, 4, 3))
    labels = rng.integers(0, 3, size=(3, 4))
    loss, grad = semantic_cross_entropy(logits, labels)
    fd = central_difference(lambda z: semantic_cross_entropy(z, labels)[0], logits)
    assert rel_err(grad, fd) < 1e-6
    assert semantic_cross_entropy(np.zeros((1, 1, 3)), np.zeros((1, 1), int))[0] == pytest.approx(math.log(3))


def test_bernoulli_entropy_values():
    assert bernoulli_entropy(0.5) == pytest.approx(math.log(2))
    assert bernoulli_entropy(0.0) == 0.0 and bernoulli_entropy(1.0) == 0.0
    assert bernoulli_entropy(1 / 8) == pytest.approx(0.376770, abs=5e-7)
    with pytest.raises(ValueError):
        bernoulli_entropy(1.5)


def test_bernoulli_entropy_symmetric_and_concave():
    p = np.linspace(0, 1, 201)
    h = bernoulli_entropy(p)
    np.testing.assert_allclose(h, bernoulli_entropy(1 - p), atol=1e-15)
    assert np.all(h[1:-1] > (h[:-2] + h[2:]) / 2)


def test_concrete_regularizer_hand_value():
    layer = ConcreteLayerSpec(weight_sq_norm=2000.0, p=0.2, f=100)
    h02 = -(0.2 * math.log(0.2) + 0.8 * math.log(0.8))
    expected = (1e-6 * 0.8 / 2 * 2000 - 1e-3 * 100 * h02) / 50
    assert concrete_regularizer([layer]) == pytest.approx(expected, rel=1e-12)
    assert concrete_regularizer([layer]) == pytest.approx(-9.848e-4, abs=5e-8)


def test_concrete_regularizer_limits():
    cfg = ConcreteConfig()
    tiny = ConcreteLayerSpec(10.0, 1e-12, 4)
    assert concrete_regularizer([tiny], cfg) == pytest.approx(cfg.iota_sq * 10.0 / (2 * cfg.n), rel=1e-6)
    ps = np.linspace(0.05, 0.95, 19)
    vals = [concrete_regularizer([ConcreteLayerSpec(0.0, p, 7)]) for p in ps]
    assert ps[int(np.argmin(vals))] == pytest.approx(0.5)
    assert vals[9] == pytest.approx(-1e-3 * 7 * math.log(2) / 50)


def test_concrete_layer_from_logit():
    assert ConcreteLayerSpec.from_logit(1.0, 0.0, 3).p == 0.5
    with pytest.raises(ValueError):
        ConcreteLayerSpec(1.0, 1.0, 3)


def test_dropout_mask_values():
    assert concrete_dropout_mask(0.5, 0.1, 0.5) == pytest.approx(0.5)
    assert concrete_dropout_mask(0.3, 1e-4, 0.9) == pytest.approx(1.0)
    expected = 1 / (1 + math.exp(-math.log(3 / 7) / 0.1))
    assert concrete_dropout_mask(0.3, 0.1, 0.5) == pytest.approx(expected, rel=1e-12)
    assert concrete_dropout_mask(0.3, 0.1, 0.5) == pytest.approx(2.088e-4, rel=1e-3)


def test_dropout_mask_monotone_in_u():
    u = np.linspace(1e-6, 1 - 1e-6, 500)
    z = concrete_dropout_mask(0.3, 0.1, u)
    assert np.all(np.diff(z) >= 0)


def test_dropout_mask_mean_is_drop_probability():
    # z is the drop indicator, so its mean sharpens to p
    u = np.random.default_rng(4).random(100_000)
    z = concrete_dropout_mask(0.3, 0.02, u)
    assert abs(z.mean() - 0.3) < 0.01
