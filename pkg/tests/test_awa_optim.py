import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drrskd.awa import AwaConfig, ScheduleSpec, awa_weights, epoch_schedule
from drrskd.errors import ConfigError, FrozenModelError, NumericError
from drrskd.model import ModelSpec, build
from drrskd.optim import Adam, lr_at

UP = ScheduleSpec("epoch_linear_up")
DOWN = ScheduleSpec("epoch_linear_down")


def test_epoch_schedule_examples():
    assert epoch_schedule(UP, 50, 100) == 0.5
    assert epoch_schedule(DOWN, 0, 100) == 1 and epoch_schedule(DOWN, 100, 100) == 0
    warm = ScheduleSpec("epoch_linear_up", warmup_epochs=50, warmup_value=0.5)
    assert epoch_schedule(warm, 10, 100) == 0.5
    assert epoch_schedule(ScheduleSpec("fixed", 0.3), 77, 100) == 0.3
    with pytest.raises(ConfigError):
        epoch_schedule(UP, 101, 100)
    with pytest.raises(ConfigError):
        epoch_schedule(ScheduleSpec("awa"), 1, 10)


def test_warmup_then_linear_sequence():
    warm = ScheduleSpec("epoch_linear_up", warmup_epochs=50, warmup_value=0.5)
    seq = [epoch_schedule(warm, t, 100) for t in range(100)]
    assert seq[:50] == [0.5] * 50
    assert seq[50:53] == [0.5, 0.51, 0.52]


@given(st.integers(1, 500), st.data())
def test_schedules_complementary(T, data):
    t = data.draw(st.integers(0, T))
    assert epoch_schedule(UP, t, T) + epoch_schedule(DOWN, t, T) == pytest.approx(1.0, abs=1e-15)


def test_awa_examples():
    w = awa_weights([1.7], [1.7], AwaConfig(alpha=1.3))
    assert w.w_lb[0] == 1.0 and w.w_kd[0] == pytest.approx(0.3, abs=1e-15)
    w = awa_weights([2.5], [0.5], AwaConfig(alpha=1.3))
    assert w.w_lb[0] == pytest.approx(0.1353352832366127, abs=1e-15)
    assert w.w_kd[0] == pytest.approx(1.1646647167633873, abs=1e-15)
    w = awa_weights([0.5], [2.0], AwaConfig(alpha=1.3))
    assert w.w_lb[0] == pytest.approx(4.4816890703380645, abs=1e-14) and w.w_kd[0] == 0.0


def test_awa_per_batch_averages_first():
    w = awa_weights([1.0, 3.0], [1.0, 1.0], AwaConfig(alpha=1.5, granularity="per_batch"))
    assert w.w_lb == math.exp(1.0 - 2.0)
    assert isinstance(w.w_kd, float)


def test_awa_rejects_non_finite():
    with pytest.raises(NumericError):
        awa_weights([np.nan], [1.0], AwaConfig())
    with pytest.raises(NumericError):
        awa_weights([1.0], [np.inf], AwaConfig())


@settings(max_examples=200)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20), st.floats(0.01, 5))
def test_awa_shift_invariance_and_monotonicity(l_on, l_of, c, alpha):
    cfg = AwaConfig(alpha=alpha)
    a = awa_weights([l_on], [l_of], cfg)
    b = awa_weights([l_on + c], [l_of + c], cfg)
    assert b.w_lb[0] == pytest.approx(a.w_lb[0], rel=1e-12)
    worse = awa_weights([l_on + 0.5], [l_of], cfg)
    assert worse.w_lb[0] < a.w_lb[0]
    assert worse.w_kd[0] >= a.w_kd[0]


def test_lr_schedule_examples():
    assert all(lr_at(e) == 0.0002 for e in range(7))
    assert lr_at(7) == pytest.approx(0.00016, rel=1e-15)
    assert lr_at(14) == pytest.approx(0.0002 * 0.8 ** 2, rel=1e-15)
    with pytest.raises(ConfigError):
        lr_at(3, period=0)


@given(st.integers(1, 20), st.integers(0, 300))
def test_lr_piecewise_constant(period, epoch):
    same_block = (epoch + 1) % period != 0
    if same_block:
        assert lr_at(epoch, period=period) == lr_at(epoch + 1, period=period)
    else:
        assert lr_at(epoch + 1, period=period) < lr_at(epoch, period=period)


def _scalar_model(value):
    m = build(ModelSpec("mlp", (1,), (1,), 2), 0)
    for p in m.params:
        p.value[...] = value
    return m


def test_adam_zero_grad_keeps_params():
    m = _scalar_model(0.7)
    opt = Adam(m)
    opt.step(0.1)
    assert all(np.all(p.value == 0.7) for p in m.params)
    assert opt.step_count == 1


@pytest.mark.parametrize("g", [1.0, -3.0, 1e-3])
def test_adam_first_step_closed_form(g):
    m = _scalar_model(0.0)
    for p in m.params:
        p.grad[...] = g
    Adam(m).step(0.01)
    # from zero moments both bias-corrected estimates equal g and g**2
    expected = -0.01 * g / (abs(g) + 1e-8)
    for p in m.params:
        np.testing.assert_allclose(p.value, expected, rtol=1e-12)
        assert np.all(np.sign(p.value) == -np.sign(g))


def test_adam_leaves_grads_untouched():
    m = _scalar_model(0.0)
    for p in m.params:
        p.grad[...] = 2.0
    Adam(m).step(0.01)
    assert all(np.all(p.grad == 2.0) for p in m.params)


def test_adam_converges_on_quadratic():
    m = _scalar_model(0.0)
    opt = Adam(m)
    for _ in range(200):
        for p in m.params:
            p.grad[...] = 2.0 * (p.value - 0.5)
        opt.step(0.01)
    assert all(np.all(np.abs(p.value - 0.5) < 1e-2) for p in m.params)


def test_adam_deterministic():
    runs = []
    for _ in range(2):
        m = build(ModelSpec("mlp", (3,), (4,), 2), 5)
        opt = Adam(m)
        r = np.random.default_rng(1)
        for _ in range(10):
            for p in m.params:
                p.grad[...] = r.normal(size=p.shape)
            opt.step(0.01)
        runs.append(m.param_bytes())
    assert runs[0] == runs[1]


def test_adam_rejects_frozen():
    m = _scalar_model(0.0)
    m.freeze()
    with pytest.raises(FrozenModelError):
        Adam(m).step(0.1)
