import numpy as np
import pytest

from annocalib.core import DatasetMeta, iou
from annocalib.matching import cost_matrix, mahalanobis_cost, match_predictions
from conftest import make_cluster, make_pred, random_box
from oracles import brute_force_assignment


def test_mahalanobis_zero_residual():
    meta = DatasetMeta(1, 2)
    cl = make_cluster([[0, 0, 10, 10]], [1], meta)
    assert mahalanobis_cost(cl, make_pred([0, 0, 10, 10]), 2) == 0.0


def test_mahalanobis_divides_by_annotator_count():
    meta = DatasetMeta(1, 2)
    cl = make_cluster([[1, 0, 10, 10]], [1], meta)
    assert mahalanobis_cost(cl, make_pred([0, 0, 10, 10]), 2) == 0.5


def test_mahalanobis_doubling_variance_halves_cost(rng):
    meta = DatasetMeta(1, 3)
    cl = make_cluster([random_box(rng) for _ in range(3)], [1, 1, 1], meta)
    var = rng.uniform(0.5, 3, 4)
    pred = make_pred([10, 10, 40, 40], var)
    assert mahalanobis_cost(cl, pred.replace(var=2 * var), 3) == \
        pytest.approx(mahalanobis_cost(cl, pred, 3) / 2, rel=1e-12)


def test_mahalanobis_floor_handles_zero_variance():
    meta = DatasetMeta(1, 2)
    cl = make_cluster([[1, 0, 10, 10]], [1], meta)
    assert mahalanobis_cost(cl, make_pred([0, 0, 10, 10], [0, 0, 0, 0]), 2, 1e-6) == 0.5e6


def test_single_valid_match_and_zero_iou_guard():
    meta = DatasetMeta(1, 2)
    cl = make_cluster([[0, 0, 10, 10]], [1], meta)
    out = match_predictions([cl], [make_pred([1, 1, 11, 11])], 2)
    assert (out.tp, out.fp, out.fn) == ([(0, 0)], [], [])
    out = match_predictions([cl], [make_pred([20, 20, 30, 30])], 2)
    assert (out.tp, out.fp, out.fn) == ([], [0], [0])


def test_empty_sides():
    meta = DatasetMeta(1, 2)
    cl = make_cluster([[0, 0, 10, 10]], [1], meta)
    out = match_predictions([], [make_pred([0, 0, 1, 1])] * 2, 2)
    assert (out.tp, out.fp, out.fn) == ([], [0, 1], [])
    out = match_predictions([cl], [], 2)
    assert (out.tp, out.fp, out.fn) == ([], [], [0])


def _random_instance(rng, meta, n_clusters, n_preds):
    clusters = []
    for _ in range(n_clusters):
        base = random_box(rng)
        size = int(rng.integers(1, meta.num_annotators + 1))
        boxes = [base + np.tile(rng.normal(0, 2, 2), 2) for _ in range(size)]
        clusters.append(make_cluster(boxes, [1] * size, meta))
    preds = [make_pred(random_box(rng), rng.uniform(1, 50, 4)) for _ in range(n_preds)]
    return clusters, preds


def test_match_predictions_against_enumeration(rng):
    meta = DatasetMeta(1, 3)
    for _ in range(100):
        n, m = (int(v) for v in rng.integers(0, 6, 2))
        clusters, preds = _random_instance(rng, meta, n, m)
        out = match_predictions(clusters, preds, 3)
        assert sorted([n for n, _ in out.tp] + out.fp) == list(range(m))
        assert sorted([h for _, h in out.tp] + out.fn) == list(range(n))
        if n == 0 or m == 0:
            continue
        cost = np.array([[mahalanobis_cost(c, p, 3) for p in preds] for c in clusters])
        best, optima = brute_force_assignment(cost)
        expected = [{(pn, h) for h, pn in o if iou(clusters[h].mean_box, preds[pn].mean) > 0}
                    for o in optima]
        assert set(out.tp) in expected
        for pn, h in out.tp:
            assert iou(clusters[h].mean_box, preds[pn].mean) > 0


def test_forbid_mode_never_worse_in_matches(rng):
    meta = DatasetMeta(1, 3)
    for _ in range(50):
        clusters, preds = _random_instance(rng, meta, 4, 4)
        void = match_predictions(clusters, preds, 3, mode="void")
        forbid = match_predictions(clusters, preds, 3, mode="forbid")
        assert len(forbid.tp) >= len(void.tp)
        for pn, h in forbid.tp:
            assert iou(clusters[h].mean_box, preds[pn].mean) > 0


def test_permutation_changes_only_indices(rng):
    meta = DatasetMeta(1, 3)
    clusters, preds = _random_instance(rng, meta, 5, 5)
    out = match_predictions(clusters, preds, 3)
    pairs = {(clusters[h].mean_box.tobytes(), preds[n].mean.tobytes()) for n, h in out.tp}
    pc, pp = rng.permutation(5), rng.permutation(5)
    clusters2 = [clusters[i] for i in pc]
    preds2 = [preds[i] for i in pp]
    out2 = match_predictions(clusters2, preds2, 3)
    pairs2 = {(clusters2[h].mean_box.tobytes(), preds2[n].mean.tobytes()) for n, h in out2.tp}
    assert pairs == pairs2


def test_cost_matrix_matches_scalar_cost(rng):
    meta = DatasetMeta(1, 3)
    clusters, preds = _random_instance(rng, meta, 3, 4)
    m = cost_matrix(clusters, preds, 3)
    for h, c in enumerate(clusters):
        for n, p in enumerate(preds):
            assert m[h, n] == pytest.approx(mahalanobis_cost(c, p, 3), rel=1e-12)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        match_predictions([], [], 2, mode="greedy")
