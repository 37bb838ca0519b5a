import numpy as np
import pytest
from hypothesis import given, strategies as st

from lstmplc.lstm import init_network, zero_network
from lstmplc.numerics import ConfigurationError, SeededRng
from lstmplc.optim import AdamConfig, AdamState, adam_step, clip_gradients, global_norm, reset_optimizer

from oracles import scalar_adam

NOCLIP = AdamConfig(clip_norm=None)


def scalar_setup(theta0):
    net = zero_network(1, 1, 1, dtype=np.float64)
    net.w_out[0] = theta0
    return net, AdamState.fresh(net)


def grads_with(net, g):
    grads = net.zeros_like()
    grads.w_out[0] = g
    return grads


def test_zero_gradient_leaves_params_and_counts_step():
    net = init_network(SeededRng(1), 3, 4, 2, dtype=np.float64)
    before = net.copy()
    st_ = AdamState.fresh(net)
    assert adam_step(net, net.zeros_like(), st_, NOCLIP)
    assert net.equals(before) and st_.t == 1


def test_first_step_hand_value():
    net, st_ = scalar_setup(0.0)
    adam_step(net, grads_with(net, 1.0), st_, NOCLIP)
    # m_hat = v_hat = 1, so the step is alpha / (1 + eps)
    assert net.w_out[0] == pytest.approx(-0.001, abs=1e-10)
    assert st_.t == 1


def test_trajectory_matches_reference():
    gs = [1.0, -0.5, 0.25, 2.0, 0.0, -3.0, 0.1, 0.7, -0.2, 1.5]
    net, st_ = scalar_setup(0.3)
    traj = []
    for g in gs:
        adam_step(net, grads_with(net, g), st_, NOCLIP)
        traj.append(float(net.w_out[0]))
    np.testing.assert_allclose(traj, scalar_adam(0.3, gs), rtol=0, atol=1e-12)


def test_determinism_100_steps():
    def run():
        net = init_network(SeededRng(3), 4, 3, 2)
        st_ = AdamState.fresh(net)
        rng = SeededRng(99)
        for _ in range(100):
            g = net.map(lambda a: rng.uniform(-1, 1, a.size).reshape(a.shape).astype(a.dtype))
            adam_step(net, g, st_, AdamConfig())
        return net
    assert run().equals(run())


def test_non_finite_gradient_skips_step():
    net = init_network(SeededRng(3), 2, 2, 1)
    before = net.copy()
    st_ = AdamState.fresh(net)
    g = net.zeros_like()
    g.layers[0].U[0, 0] = np.nan
    assert not adam_step(net, g, st_, AdamConfig())
    assert net.equals(before) and st_.t == 0


def test_shape_mismatch_is_configuration_error():
    net = zero_network(2, 2, 1)
    with pytest.raises(ConfigurationError):
        adam_step(net, zero_network(2, 3, 1), AdamState.fresh(net), AdamConfig())


@given(st.floats(0.01, 5.0), st.integers(0, 1000))
def test_clip_bounds_global_norm(clip, seed):
    net = init_network(SeededRng(seed), 3, 3, 2, init_bound=10.0, dtype=np.float64)
    clip_gradients(net, clip)
    assert global_norm(net) <= clip + 1e-6


def test_clipping_does_not_mutate_caller_gradients():
    net = init_network(SeededRng(1), 2, 2, 1, dtype=np.float64)
    g = net.map(lambda a: np.full_like(a, 100.0))
    g0 = g.copy()
    adam_step(net, g, AdamState.fresh(net), AdamConfig(clip_norm=1.0))
    assert g.equals(g0)


def test_params_finite_and_v_nonnegative():
    net = init_network(SeededRng(5), 3, 3, 1)
    st_ = AdamState.fresh(net)
    rng = np.random.default_rng(5)
    for _ in range(30):
        g = net.map(lambda a: (rng.standard_normal(a.shape) * 1e3).astype(a.dtype))
        adam_step(net, g, st_, AdamConfig())
    assert all(np.isfinite(a).all() for _, a in net.tensors())
    assert all((a >= 0).all() for _, a in st_.v.tensors())


def test_reset_optimizer():
    net = init_network(SeededRng(2), 3, 3, 1, dtype=np.float64)
    st_ = AdamState.fresh(net)
    g = net.map(lambda a: np.ones_like(a))
    for _ in range(3):
        adam_step(net, g, st_, NOCLIP)
    reset_optimizer(st_)
    assert st_.t == 0 and all(np.all(a == 0) for _, a in st_.m.tensors() + st_.v.tensors())
    once = st_.copy()
    reset_optimizer(st_)
    assert st_.t == once.t and st_.m.equals(once.m) and st_.v.equals(once.v)

    a, b = net.copy(), net.copy()
    adam_step(a, g, st_, NOCLIP)
    adam_step(b, g, AdamState.fresh(b), NOCLIP)
    assert a.equals(b)


@pytest.mark.parametrize("kw", [dict(alpha=0), dict(beta1=1.0), dict(beta2=-0.1), dict(epsilon=0),
                                dict(clip_norm=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        AdamConfig(**kw)
