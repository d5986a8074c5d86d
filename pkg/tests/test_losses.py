import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annocalib.core import DatasetMeta
from annocalib.losses import (
    classification_loss,
    descend,
    image_loss,
    loss_gradient,
    regression_loss,
)
from conftest import make_cluster, make_pred
from oracles import finite_difference


def test_cross_entropy_spot_values():
    assert classification_loss([0, 1], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert classification_loss([0, 1], [0.9, 0.1]) == pytest.approx(2.302585, abs=1e-6)
    assert classification_loss([0.5, 0.5], [0.5, 0.5], mode="drop") == \
        pytest.approx(0.5 * math.log(2))


def test_objectness_mode_adds_binary_term():
    t, p = [0.25, 0.75], [0.1, 0.9]
    base = classification_loss(t, p, mode="drop")
    full = classification_loss(t, p, mode="objectness", objectness=0.6)
    assert full - base == pytest.approx(-(0.75 * math.log(0.6) + 0.25 * math.log(0.4)))
    with pytest.raises(ValueError):
        classification_loss(t, p, mode="objectness")
    with pytest.raises(ValueError):
        classification_loss(t, p, mode="sometimes")


def test_total_loss_weighting():
    meta = DatasetMeta(1, 2)
    cl = make_cluster([[0, 0, 10, 10], [0, 0, 10, 10]], [1, 1], meta)
    # ten pixels of regression error, unit cross-entropy
    pred = make_pred([10, 0, 10, 10], var=[0] * 4, probs=(1 - math.exp(-1), math.exp(-1)))
    out = image_loss([cl], [pred], [(0, 0)], lam=0.1)
    assert out.l_reg == pytest.approx(10.0)
    assert out.l_cls == pytest.approx(1.0)
    assert out.l_total == pytest.approx(2.0)


def test_empty_pairs():
    out = image_loss([], [], [])
    assert out.empty and out.l_total == 0.0


def _random_pair(rng, meta):
    k = meta.num_annotators
    size = int(rng.integers(1, k + 1))
    base = rng.uniform(0, 50, 2)
    boxes = [np.r_[base, base + 20] + rng.normal(0, 2, 4) for _ in range(size)]
    classes = rng.integers(1, meta.num_classes + 1, size).tolist()
    cl = make_cluster(boxes, classes, meta)
    probs = rng.dirichlet(np.ones(meta.num_classes + 1))
    pred = make_pred(np.r_[base, base + 20] + rng.normal(0, 3, 4), rng.uniform(0.1, 20, 4),
                     probs, certainty=rng.uniform(0.05, 0.95))
    return cl, pred


@given(st.floats(0, 5), st.floats(0, 5), st.integers(0, 10_000))
def test_loss_affine_in_lambda(l1, l2, seed):
    rng = np.random.default_rng(seed)
    meta = DatasetMeta(3, 4)
    cl, pred = _random_pair(rng, meta)
    a = image_loss([cl], [pred], [(0, 0)], lam=l1)
    b = image_loss([cl], [pred], [(0, 0)], lam=l2)
    assert a.l_cls == b.l_cls
    assert a.l_total - b.l_total == pytest.approx((l1 - l2) * a.l_reg, abs=1e-9)


@given(st.integers(0, 10_000))
def test_cross_entropy_minimised_at_target(seed):
    rng = np.random.default_rng(seed)
    t = rng.dirichlet(np.ones(4))
    p = rng.dirichlet(np.ones(4))
    assert classification_loss(t, p) >= classification_loss(t, t) - 1e-12


@given(st.integers(0, 10_000), st.floats(-50, 50), st.floats(-50, 50))
def test_regression_translation_invariant(seed, dx, dy):
    rng = np.random.default_rng(seed)
    box, pred = rng.uniform(0, 100, 4), rng.uniform(0, 100, 4)
    var = rng.uniform(0, 5, 4)
    shift = np.array([dx, dy, dx, dy])
    assert regression_loss(box + shift, var, pred + shift, var) == \
        pytest.approx(regression_loss(box, var, pred, var), rel=1e-9, abs=1e-9)


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


def check_gradients(rng, n_points=100, lam=0.1):
    """Max relative error of every analytic gradient against central
    differences at random non-kink points."""
    meta = DatasetMeta(3, 4)
    worst = 0.0
    for i in range(n_points):
        mode = ("keep", "drop", "objectness")[i % 3]
        pairs_data = [_random_pair(rng, meta) for _ in range(2)]
        clusters = [c for c, _ in pairs_data]
        preds = [p for _, p in pairs_data]
        pairs = [(0, 0), (1, 1)]
        logits = np.log(preds[0].class_probs)
        obj_logit = math.log(preds[0].certainty / (1 - preds[0].certainty))

        def total(pred0):
            return image_loss(clusters, [pred0, preds[1]], pairs, lam, mode).l_total

        cases = {
            "pred_mean": (preds[0].mean, lambda x: total(preds[0].replace(mean=x))),
            "pred_var": (preds[0].var, lambda x: total(preds[0].replace(var=x))),
            "class_logits": (logits, lambda z: total(preds[0].replace(
                class_probs=_softmax(z)))),
            "objectness_logit": (np.array([obj_logit]), lambda z: total(preds[0].replace(
                certainty=1 / (1 + math.exp(-z[0]))))),
        }
        for wrt, (x0, f) in cases.items():
            analytic = loss_gradient(clusters, preds, pairs, wrt, lam, mode)[0]
            numeric = finite_difference(f, x0, h=1e-5)
            worst = max(worst, _rel_err(analytic, numeric))
    return worst


def test_gradients_match_finite_differences(rng):
    assert check_gradients(rng, n_points=30) <= 1e-4


def test_logit_gradient_sums_to_zero_in_keep_mode(rng):
    meta = DatasetMeta(3, 4)
    cl, pred = _random_pair(rng, meta)
    g = loss_gradient([cl], [pred], [(0, 0)], "class_logits")[0]
    assert g.sum() == pytest.approx(0.0, abs=1e-12)


def test_l1_kink_uses_zero_subgradient():
    meta = DatasetMeta(1, 2)
    cl = make_cluster([[0, 0, 10, 10]], [1], meta)
    pred = make_pred([0, 0, 10, 10])
    assert loss_gradient([cl], [pred], [(0, 0)], "pred_mean")[0].tolist() == [0] * 4


def test_unknown_gradient_target():
    with pytest.raises(ValueError):
        loss_gradient([], [], [], "weights")


def test_descent_reaches_the_targets(rng):
    meta = DatasetMeta(3, 4)
    for _ in range(5):
        cl, pred = _random_pair(rng, meta)
        out = descend(cl, pred)
        assert np.abs(out.mean - cl.mean_box).sum() <= 1e-3
        assert np.abs(out.var - np.maximum(cl.target_var, 1e-6)).sum() <= 1e-3
        # zero-mass classes only decay like 1/steps through softmax
        assert 0.5 * np.abs(out.class_probs - cl.soft_label).sum() <= 0.01
        final = image_loss([cl], [out], [(0, 0)])
        assert final.l_reg <= image_loss([cl], [pred], [(0, 0)]).l_reg
