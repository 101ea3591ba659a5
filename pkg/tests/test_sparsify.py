import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import cubic_density, mlp_forward

from sparsekit.errors import ConfigurationError, DivergenceError, ShapeError
from sparsekit.sparsify import (
    GLOBAL,
    METRICS_HEADER,
    Dataset,
    DistillConfig,
    Grads,
    Mask,
    Mlp,
    PruneSchedule,
    TrainState,
    TwoClusterTask,
    forward,
    init_mlp,
    kept_count,
    kl_divergence,
    loss_and_grads,
    magnitude_mask,
    prune_finetune,
    schedule_density,
    sgd_step,
)

# --- schedule ------------------------------------------------------------------------


def test_schedule_endpoints_and_midpoint():
    s = PruneSchedule(1.0, 1 / 8, 0, 100, 10)
    assert schedule_density(s, 0) == 1.0
    assert schedule_density(s, 100) == 0.125
    assert schedule_density(s, 50) == 0.234375
    assert schedule_density(s, -5) == 1.0 and schedule_density(s, 500) == 0.125


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(0, 50), st.integers(1, 200), st.integers(-10, 300)
)
def test_schedule_matches_closed_form_and_is_monotone(a, b, t0, span, t):
    d_i, d_f = max(a, b), min(a, b)
    s = PruneSchedule(d_i, d_f, t0, t0 + span, 1)
    assert schedule_density(s, t) == pytest.approx(cubic_density(d_i, d_f, t0, t0 + span, t), abs=1e-15)
    assert schedule_density(s, t + 1) <= schedule_density(s, t)


def test_schedule_continuous_at_endpoints():
    s = PruneSchedule(0.9, 0.1, 10, 10_000, 1)
    assert abs(schedule_density(s, 11) - 0.9) < 1e-3
    assert abs(schedule_density(s, 9_999) - 0.1) < 1e-9


@pytest.mark.parametrize(
    "kwargs",
    [dict(d_init=0.5, d_final=0.6), dict(t_begin=5, t_end=5), dict(prune_every=0), dict(d_final=0.0), dict(exponent=2)],
)
def test_schedule_validation(kwargs):
    with pytest.raises(ConfigurationError):
        PruneSchedule(**kwargs)


# --- masks ---------------------------------------------------------------------------


def test_mask_examples():
    assert magnitude_mask([np.array([1.0, -3, 2, 0.5])], 0.5).layers[0].tolist() == [False, True, True, False]
    assert magnitude_mask([np.array([2.0, -2, 2, 2])], 0.5).layers[0].tolist() == [True, True, False, False]
    assert magnitude_mask([np.ones((3, 3))], 1.0).layers[0].all()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40), st.integers(1, 40), st.floats(0.001, 1.0))
def test_mask_counts_and_idempotence(seed, r, c, d):
    w = np.random.default_rng(seed).standard_normal((r, c))
    m = magnitude_mask([w], d).layers[0]
    assert m.sum() == math.ceil(round(d * w.size, 9)) == kept_count(w.size, d)
    assert abs(m.sum() - round(d * w.size)) <= 1
    again = magnitude_mask([w * m], d).layers[0]
    assert np.array_equal(again, m)
    # nothing dropped is larger than anything kept
    if 0 < m.sum() < m.size:
        assert np.abs(w[~m]).max() <= np.abs(w[m]).min()


def test_kept_count_float_noise():
    assert kept_count(64, 0.125) == 8
    assert kept_count(1000, 0.001) == 1
    assert kept_count(7, 1 / 8) == 1


def test_global_scope():
    a, b = np.array([[10.0, 9.0]]), np.array([[1.0, 2.0]])
    m = magnitude_mask([a, b], 0.5, GLOBAL)
    assert m.layers[0].all() and not m.layers[1].any()
    with pytest.raises(ConfigurationError):
        magnitude_mask([a], 0.5, "bogus")


# --- forward and loss ----------------------------------------------------------------


def test_forward_zero_input_relu():
    m = init_mlp([3, 4, 2], "relu", 0)
    logits, trace = forward(m, None, np.zeros((5, 3)))
    assert not logits.any() and not trace.features[0].any()


def test_forward_all_ones_mask_is_unmasked():
    m = init_mlp([3, 5, 5, 2], "gelu", 1)
    x = np.random.default_rng(0).standard_normal((4, 3))
    a, _ = forward(m, None, x)
    b, _ = forward(m, Mask.ones(m.weights), x)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("act", ["relu", "gelu"])
def test_forward_vs_hand_rolled(act):
    rng = np.random.default_rng(5)
    m = init_mlp([2, 3, 2], act, 5)
    m.biases[0][:] = rng.standard_normal(3)
    x = rng.standard_normal((6, 2))
    logits, _ = forward(m, None, x)
    want = mlp_forward([w.tolist() for w in m.weights], [b.tolist() for b in m.biases], act, x)
    assert np.abs(logits - want).max() <= 1e-6


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        forward(init_mlp([3, 2, 2]), None, np.zeros((2, 4)))


def _batch(seed, n=16, d=2):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.integers(0, 2, n)


def test_student_equal_teacher_has_zero_distill_terms():
    m = init_mlp([2, 8, 8, 2], "gelu", 3)
    loss, g = loss_and_grads(m, None, _batch(0), m.copy(), DistillConfig(0.0, 1.0, 1.0, 2.0))
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert all(np.abs(a).max() < 1e-15 for a in g.weights + g.biases)


def test_plain_cross_entropy():
    m = init_mlp([2, 4, 2], "gelu", 4)
    x, y = _batch(1)
    loss, _ = loss_and_grads(m, None, (x, y), None, DistillConfig(1.0, 0.0, 0.0))
    logits, _ = forward(m, None, x)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert loss == pytest.approx(-np.log(p[np.arange(len(y)), y]).mean(), rel=1e-12)


def test_kl_properties():
    rng = np.random.default_rng(0)
    t, s = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    assert kl_divergence(t, s, 2.0) > 0
    assert kl_divergence(t, t + rng.standard_normal((5, 1)), 2.0) == pytest.approx(0.0, abs=1e-14)


def finite_difference_check(seed, mask=None):
    rng = np.random.default_rng(seed)
    s = init_mlp([2, 8, 8, 2], "gelu", seed)
    t = init_mlp([2, 8, 8, 2], "gelu", seed + 1000)
    for b in s.biases:
        b[:] = rng.standard_normal(b.shape) * 0.1
    batch = (rng.standard_normal((16, 2)), rng.integers(0, 2, 16))
    cfg = DistillConfig(1.0, 0.7, 0.5, 2.0)
    _, g = loss_and_grads(s, mask, batch, t, cfg)
    worst, h = 0.0, 1e-4
    for params, grads in ((s.weights, g.weights), (s.biases, g.biases)):
        for p, gp in zip(params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up, _ = loss_and_grads(s, mask, batch, t, cfg)
                p[idx] = old - h
                down, _ = loss_and_grads(s, mask, batch, t, cfg)
                p[idx] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(gp[idx] - fd) / max(abs(gp[idx]), abs(fd), 1e-6))
    return worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_vs_finite_differences(seed):
    assert finite_difference_check(seed) <= 1e-4


def test_masked_gradients_are_zero_and_checked():
    s = init_mlp([2, 8, 8, 2], "gelu", 9)
    mask = magnitude_mask(s.weights, 0.5)
    _, g = loss_and_grads(s, mask, _batch(2), init_mlp([2, 8, 8, 2], "gelu", 10), DistillConfig())
    for gw, m in zip(g.weights, mask.layers):
        assert not gw[~m].any()
    assert finite_difference_check(9, mask) <= 1e-4


def test_teacher_configuration_errors():
    s = init_mlp([2, 8, 2], "gelu", 0)
    with pytest.raises(ConfigurationError):
        loss_and_grads(s, None, _batch(0), None, DistillConfig(1, 0, 1))
    with pytest.raises(ConfigurationError):
        loss_and_grads(s, None, _batch(0), init_mlp([2, 6, 2]), DistillConfig(1, 0, 1))
    with pytest.raises(ConfigurationError):
        DistillConfig(0, 0, 0)


# --- optimizer -----------------------------------------------------------------------


def _zero_grads(m):
    return Grads([np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases])


def test_zero_grads_leave_parameters():
    m = init_mlp([3, 4, 2], "gelu", 0)
    new, _ = sgd_step(m, TrainState.fresh(m, 0.1), _zero_grads(m), momentum=0.9)
    assert all(np.array_equal(a, b) for a, b in zip(new.params(), m.params()))


def test_plain_gradient_descent():
    m = init_mlp([3, 4, 2], "gelu", 0)
    g = Grads([np.ones_like(w) for w in m.weights], [np.full_like(b, 2.0) for b in m.biases])
    new, _ = sgd_step(m, TrainState.fresh(m, 0.1), g, momentum=0.0)
    assert np.array_equal(new.weights[0], m.weights[0] - 0.1 * 1.0)
    assert np.array_equal(new.biases[1], m.biases[1] - 0.1 * 2.0)


def test_momentum_recursion():
    m = Mlp([1, 1, 1], [np.array([[1.0]]), np.array([[2.0]])], [np.zeros(1), np.zeros(1)], ["relu"])
    state = TrainState.fresh(m, 0.5)
    g1 = Grads([np.array([[1.0]]), np.array([[0.0]])], [np.zeros(1), np.zeros(1)])
    g2 = Grads([np.array([[3.0]]), np.array([[0.0]])], [np.zeros(1), np.zeros(1)])
    m, state = sgd_step(m, state, g1, momentum=0.9)
    m, state = sgd_step(m, state, g2, momentum=0.9)
    v1 = 1.0
    v2 = 0.9 * v1 + 3.0
    assert m.weights[0][0, 0] == 1.0 - 0.5 * v1 - 0.5 * v2
    assert state.step == 2


def test_masked_weights_stay_zero():
    rng = np.random.default_rng(0)
    m = init_mlp([4, 6, 2], "gelu", 0)
    mask = magnitude_mask(m.weights, 0.25)
    m.weights = [w * k for w, k in zip(m.weights, mask.layers)]
    state = TrainState.fresh(m, 0.05, mask=mask)
    for _ in range(200):
        g = Grads([rng.standard_normal(w.shape) for w in m.weights], [rng.standard_normal(b.shape) for b in m.biases])
        m, state = sgd_step(m, state, g, momentum=0.9)
    for w, k in zip(m.weights, mask.layers):
        assert not w[~k].any()


# --- prune + finetune ----------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_data():
    return TwoClusterTask(dim=4, n_pretrain=10, n_train=48, n_test=100).make(0)[1]


def test_dense_schedule_keeps_everything(tiny_data):
    m = init_mlp([4, 8, 2], "gelu", 0)
    sched = PruneSchedule(1.0, 1.0, 0, 5, 1)
    _, mask, hist = prune_finetune(m, tiny_data, sched, DistillConfig(1, 0, 0), 2, 0)
    assert all(k.all() for k in mask.layers)
    assert {row[1] for row in hist} == {1.0}
    assert len(METRICS_HEADER) == len(hist[0]) == 4


def test_one_shot_to_eighth(tiny_data):
    m = init_mlp([4, 16, 16, 2], "gelu", 1)
    sched = PruneSchedule(1.0, 0.125, 4, 5, 1)
    model, mask, _ = prune_finetune(m, tiny_data, sched, DistillConfig(), 2, 1)
    assert mask.kept() == [kept_count(w.size, 0.125) for w in m.weights]
    for w, k in zip(model.weights, mask.layers):
        assert not w[~k].any()


def test_final_mask_enforced_when_run_is_short(tiny_data):
    m = init_mlp([4, 16, 2], "gelu", 2)
    sched = PruneSchedule(1.0, 0.125, 0, 10_000, 10)
    _, mask, _ = prune_finetune(m, tiny_data, sched, DistillConfig(), 1, 2)
    assert mask.kept() == [8, 4]


def test_prune_finetune_is_reproducible(tiny_data):
    m = init_mlp([4, 8, 8, 2], "gelu", 3)
    sched = PruneSchedule(1.0, 0.25, 0, 6, 2)
    a = prune_finetune(m, tiny_data, sched, DistillConfig(), 3, 7)
    b = prune_finetune(m, tiny_data, sched, DistillConfig(), 3, 7)
    assert a[2] == b[2]
    assert all(np.array_equal(x, y) for x, y in zip(a[0].params(), b[0].params()))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 4)) * 1e3
    data = Dataset(x, rng.integers(0, 2, 16), x, rng.integers(0, 2, 16))
    m = init_mlp([4, 8, 2], "relu", 0)
    with pytest.raises(DivergenceError):
        prune_finetune(m, data, PruneSchedule(1, 1, 0, 1, 1), DistillConfig(1, 0, 0), 50, 0, lr=1e6, momentum=0.9)
