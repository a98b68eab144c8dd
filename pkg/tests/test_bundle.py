import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpbm import bundle
from dpbm.bundle import (BundleModel, empty_model, initial_model, linearization, model_subgradient,
                         model_value, refresh, update_cutting_plane, update_polyak, update_two_cut)
from dpbm.problem import Dataset, LogisticLoss, QuadraticLoss
from dpbm.verify import suite_minorant


def sq(x):
    return float(x @ x)


def dsq(x):
    return 2.0 * np.asarray(x, dtype=float)


def one(v):
    return np.array([float(v)])


def test_model_value_examples():
    const = BundleModel("cutting_plane", (linearization(5.0, [0.0], [0.0]),), None, 2)
    assert model_value(const, one(-7)) == 5.0 and model_value(const, one(9)) == 5.0
    pm = BundleModel("cutting_plane", (bundle.Cut(one(1), 0.0), bundle.Cut(one(-1), 0.0)), None, 2)
    assert model_value(pm, one(2)) == 2.0
    fl = BundleModel("polyak", (bundle.Cut(one(1), 0.0),), 3.0, 1)
    assert model_value(fl, one(1)) == 3.0
    with pytest.raises(ValueError):
        model_value(empty_model("cutting_plane", 3), one(0))


def test_model_subgradient_examples():
    g = np.array([0.5, -1.0])
    single = BundleModel("cutting_plane", (bundle.Cut(g, 1.0),), None, 1)
    np.testing.assert_array_equal(model_subgradient(single, np.array([3.0, 4.0])), g)
    pm = BundleModel("cutting_plane", (bundle.Cut(one(1), 0.0), bundle.Cut(one(-1), 0.0)), None, 2)
    np.testing.assert_array_equal(model_subgradient(pm, one(0)), [1.0])
    fl = BundleModel("polyak", (bundle.Cut(one(1), 0.0),), 3.0, 1)
    np.testing.assert_array_equal(model_subgradient(fl, one(1)), [0.0])
    # floor tied with a cut: the cut wins
    tie = BundleModel("polyak", (bundle.Cut(one(1), 0.0),), 1.0, 1)
    np.testing.assert_array_equal(model_subgradient(tie, one(1)), [1.0])


def test_update_polyak_examples():
    m = update_polyak(1.0, dsq(one(1)), one(1), 0.0)
    for z in (-2.0, 0.0, 0.3, 0.5, 2.0):
        assert model_value(m, one(z)) == pytest.approx(max(2 * z - 1, 0.0))
    m = update_polyak(4.0, [0.0], one(7), 4.0)
    assert model_value(m, one(-100)) == 4.0
    with pytest.raises(ValueError):
        update_polyak(2.0, [1.0], one(0), 3.0)


def test_update_cutting_plane_window():
    m = empty_model("cutting_plane", 1)
    for k, x in enumerate([-1.0, 2.0, 0.5]):
        m = update_cutting_plane(m, sq(one(x)), dsq(one(x)), one(x), k)
        assert len(m) == 1 and m.cuts[0].origin == k
    m = empty_model("cutting_plane", 3)
    for k in range(1, 5):
        m = update_cutting_plane(m, sq(one(k)), dsq(one(k)), one(k), k)
    assert [c.origin for c in m.cuts] == [2, 3, 4]
    with pytest.raises(ValueError):
        update_cutting_plane(BundleModel("two_cut", m.cuts[:1]), 0.0, [0.0], one(0))


def test_three_tangents_of_square():
    m = empty_model("cutting_plane", 3)
    for x in (-1.0, 0.0, 1.0):
        m = update_cutting_plane(m, sq(one(x)), dsq(one(x)), one(x))
    assert model_value(m, one(0.5)) == 0.0


def test_update_two_cut_examples():
    x0 = np.array([0.4, -1.2])
    m0 = initial_model("two_cut", sq(x0), dsq(x0), x0)
    m1 = update_two_cut(m0, x0, sq(x0), dsq(x0))
    assert len(m1) == 2
    for c in m1.cuts:
        np.testing.assert_allclose(c.g, m0.cuts[0].g)
        assert c.b == pytest.approx(m0.cuts[0].b)
    m = BundleModel("two_cut", (linearization(1.0, [2.0], one(1)),), None, 1)
    m2 = update_two_cut(m, one(0), 0.0, [0.0])
    np.testing.assert_array_equal(m2.cuts[0].g, [2.0])
    assert m2.cuts[0].b == -1.0
    np.testing.assert_array_equal(m2.cuts[1].g, [0.0])
    assert m2.cuts[1].b == 0.0
    with pytest.raises(ValueError):
        update_two_cut(empty_model("two_cut"), one(0), 0.0, [0.0])


def test_two_cut_minorant_by_induction():
    rng = np.random.default_rng(0)
    P = rng.standard_normal((3, 3))
    loss = QuadraticLoss(P @ P.T, rng.standard_normal(3))
    x = rng.standard_normal(3)
    m = initial_model("two_cut", loss.value(x), loss.grad(x), x)
    for k in range(30):
        x = x + rng.standard_normal(3)
        m = refresh(m, loss.value(x), loss.grad(x), x, k + 1)
    Z = rng.standard_normal((1000, 3)) * 4
    assert all(model_value(m, z) <= loss.value(z) + 1e-10 for z in Z)


def _walk_models(loss, rng, d, M=4, steps=8):
    x = rng.standard_normal(d)
    models = {p: initial_model(p, loss.value(x), loss.grad(x), x, M, loss.floor) for p in bundle.POLICIES}
    for k in range(steps):
        x = x + rng.standard_normal(d)
        models = {p: refresh(m, loss.value(x), loss.grad(x), x, k + 1) for p, m in models.items()}
    return models, x


def test_model_dominance():
    rng = np.random.default_rng(1)
    data = Dataset(rng.standard_normal((25, 3)), np.where(rng.random(25) < 0.5, 1.0, -1.0))
    loss = LogisticLoss(data)
    models, x = _walk_models(loss, rng, 3)
    newest = models["cutting_plane"].cuts[-1]
    for z in rng.standard_normal((2000, 3)) * 3:
        pcp = model_value(models["polyak_cutting_plane"], z)
        cp = model_value(models["cutting_plane"], z)
        assert pcp >= cp - 1e-13 and cp >= newest(z) - 1e-13


def test_minorant_sandwich_suite():
    rep = suite_minorant(probes=10000, seed=3)
    assert rep.passed, rep.counterexample
    assert rep.checks >= 10000


def test_subgradient_is_pure():
    m = BundleModel("cutting_plane", (bundle.Cut(one(1), 0.0), bundle.Cut(one(-1), 0.0)), None, 2)
    outs = {tuple(model_subgradient(m, one(0))) for _ in range(5)}
    assert outs == {(1.0,)}


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(-5, 5))
def test_subgradient_is_active_piece(anchors, z):
    m = empty_model("cutting_plane", 6)
    for a in anchors:
        m = update_cutting_plane(m, a * a, [2 * a], one(a))
    g = model_subgradient(m, one(z))
    # the returned slope belongs to a piece attaining the max at z
    vals = m.slopes[:, 0] * z + m.intercepts
    hit = np.flatnonzero(np.isclose(vals, vals.max(), rtol=0, atol=1e-12))
    assert g[0] in m.slopes[hit, 0]


# stochastic forms ---------------------------------------------------------

def _shard(m=5, d=3, seed=2):
    rng = np.random.default_rng(seed)
    return LogisticLoss(Dataset(rng.standard_normal((m, d)), np.where(rng.random(m) < 0.5, 1.0, -1.0)))


def test_full_batch_matches_deterministic_update():
    loss = _shard()
    x = np.array([0.3, -0.2, 1.0])
    full = np.arange(5)
    a = bundle.stochastic_update_polyak(loss, x, full, 0.0)
    b = update_polyak(loss.value(x), loss.grad(x), x, 0.0)
    assert np.array_equal(a.cuts[0].g, b.cuts[0].g) and a.cuts[0].b == b.cuts[0].b
    m = empty_model("polyak_cutting_plane", 3, 0.0)
    a = bundle.stochastic_update_cutting_plane(m, loss, x, full)
    b = update_cutting_plane(m, loss.value(x), loss.grad(x), x)
    assert np.array_equal(a.slopes, b.slopes) and np.array_equal(a.intercepts, b.intercepts)
    m2 = initial_model("two_cut", loss.value(x), loss.grad(x), x)
    y = x + 0.5
    a = bundle.stochastic_update_two_cut(m2, loss, y, full)
    b = update_two_cut(m2, y, loss.value(y), loss.grad(y))
    assert np.array_equal(a.slopes, b.slopes) and np.array_equal(a.intercepts, b.intercepts)


def test_zero_floor_valid_for_every_batch():
    loss = _shard(6)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.standard_normal(3) * 10
        batch = np.sort(rng.choice(6, int(rng.integers(1, 7)), replace=False))
        bundle.stochastic_update_polyak(loss, x, batch, 0.0)


def test_batch_cut_unbiased_by_enumeration():
    loss = _shard(5)
    x0 = np.array([0.2, 0.1, -0.4])
    z = np.array([1.0, -0.5, 0.3])
    det = linearization(loss.value(x0), loss.grad(x0), x0)(z)
    for size in (1, 2, 3):
        vals = [bundle.stochastic_update_polyak(loss, x0, list(s), 0.0).cuts[0](z)
                for s in itertools.combinations(range(5), size)]
        assert np.mean(vals) == pytest.approx(det, rel=1e-12)
