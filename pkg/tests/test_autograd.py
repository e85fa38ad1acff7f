"""Autodiff tape: per-op gradients, weight sharing, optimizer behavior."""

import numpy as np
import pytest

from mb2d.nn import autograd as ag
from mb2d.nn.gradcheck import finite_diff_check
from mb2d.nn.optim import Adam


def test_composite_gradcheck(rng):
    """Finite differences through conv/relu/resample/concat/add/scale."""
    params = {
        "w1": ag.parameter(rng.standard_normal((4, 3, 3, 3)) * 0.3),
        "b1": ag.parameter(rng.standard_normal(4) * 0.1),
        "w2": ag.parameter(rng.standard_normal((2, 7, 3, 3)) * 0.3),
        "b2": ag.parameter(rng.standard_normal(2) * 0.1),
    }
    x = ag.const(rng.random((2, 3, 8, 8)))
    tgt = rng.random((2, 2, 8, 8))

    def loss_fn():
        h = ag.leaky_relu(ag.conv3x3(x, params["w1"], params["b1"], stride=1))
        d = ag.upsample2(ag.downsample2(h))
        cat = ag.concat_ch([d, x])
        out = ag.conv3x3(cat, params["w2"], params["b2"], stride=1)
        out = ag.add(out, ag.scale(out, 0.5))
        return ag.l1_to(out, tgt)

    errs, worst = finite_diff_check(loss_fn, params, np.random.default_rng(0), n_samples=60)
    assert worst < 1e-5, f"worst rel err {worst}"


def test_strided_conv_gradcheck(rng):
    params = {
        "w": ag.parameter(rng.standard_normal((3, 2, 3, 3)) * 0.4),
        "b": ag.parameter(np.zeros(3)),
    }
    x = ag.const(rng.random((1, 2, 8, 8)))
    tgt = rng.random((1, 3, 4, 4))

    def loss_fn():
        return ag.mse_to(ag.conv3x3(x, params["w"], params["b"], stride=2), tgt)

    _, worst = finite_diff_check(loss_fn, params, np.random.default_rng(1), n_samples=40)
    assert worst < 1e-5


def test_l1_backward_is_signed_mean(rng):
    p = ag.parameter(np.array([[1.0, -2.0], [0.5, 3.0]]))
    tgt = np.zeros((2, 2))
    loss = ag.l1_to(p, tgt)
    assert loss.data == pytest.approx(6.5 / 4)
    loss.backward()
    np.testing.assert_allclose(p.grad, np.array([[1, -1], [1, 1]]) / 4.0)


def test_mse_backward_is_scaled_residual():
    p = ag.parameter(np.array([0.5, -1.0, 2.0]))
    tgt = np.array([0.0, 0.0, 0.0])
    loss = ag.mse_to(p, tgt)
    assert loss.data == pytest.approx((0.25 + 1.0 + 4.0) / 3)
    loss.backward()
    np.testing.assert_allclose(p.grad, 2.0 * p.data / 3.0)
    with pytest.raises(ValueError):
        ag.mse_to(ag.parameter(np.zeros(3)), np.zeros(4))


def test_clamp01_gradient_gates():
    p = ag.parameter(np.array([-0.5, 0.3, 1.7]))
    out = ag.clamp01(p)
    np.testing.assert_allclose(out.data, [0.0, 0.3, 1.0])
    ag.l1_to(out, np.full(3, -1.0)).backward()
    # clamped coordinates pass no gradient
    np.testing.assert_allclose(p.grad, [0.0, 1 / 3, 0.0])


def test_leaky_relu_slope():
    p = ag.parameter(np.array([-2.0, 4.0]))
    out = ag.leaky_relu(p, slope=0.1)
    np.testing.assert_allclose(out.data, [-0.2, 4.0])
    ag.l1_to(out, np.array([-10.0, -10.0])).backward()
    np.testing.assert_allclose(p.grad, [0.1 / 2, 1 / 2])


def test_shared_weight_grads_accumulate(rng):
    """Using one parameter twice must sum both contribution paths."""
    w = ag.parameter(rng.standard_normal((2, 2, 3, 3)) * 0.5)
    b = ag.parameter(np.zeros(2))
    x1 = ag.const(rng.random((1, 2, 6, 6)))
    x2 = ag.const(rng.random((1, 2, 6, 6)))
    tgt = rng.random((1, 2, 6, 6))

    ag.add_scalars([
        ag.l1_to(ag.conv3x3(x1, w, b), tgt),
        ag.l1_to(ag.conv3x3(x2, w, b), tgt),
    ]).backward()
    shared = w.grad.copy()

    g = []
    for x in (x1, x2):
        w.zero_grad()
        b.zero_grad()
        ag.l1_to(ag.conv3x3(x, w, b), tgt).backward()
        g.append(w.grad.copy())
    np.testing.assert_allclose(shared, g[0] + g[1], rtol=1e-6, atol=1e-8)


def test_add_scalars_sums_and_distributes():
    a = ag.parameter(np.array(2.0))
    b = ag.parameter(np.array(5.0))
    s = ag.add_scalars([ag.scale(a, 3.0), b])
    assert float(s.data) == pytest.approx(11.0)
    s.backward()
    assert float(a.grad) == pytest.approx(3.0)
    assert float(b.grad) == pytest.approx(1.0)


def test_const_graph_skips_backward(rng):
    x = ag.const(rng.random((1, 2, 4, 4)))
    out = ag.leaky_relu(ag.scale(x, 2.0))
    assert out._parents == ()
    loss = ag.l1_to(out, np.zeros(out.shape))
    assert loss._parents == ()


def test_backward_requires_scalar(rng):
    p = ag.parameter(rng.random((2, 2)))
    with pytest.raises(ValueError):
        ag.scale(p, 1.0).backward()


def test_detach_breaks_graph(rng):
    p = ag.parameter(rng.random(4))
    out = ag.scale(p, 2.0).detach()
    assert out._parents == () and not out.requires_grad


def test_adam_minimizes_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    p = ag.parameter(np.zeros(3))
    opt = Adam({"p": p}, lr=0.05)
    for _ in range(400):
        ag.mse_to(p, target).backward()
        opt.step()
        opt.zero_grad()
    np.testing.assert_allclose(p.data, target, atol=1e-3)


def test_adam_zero_grad_clears():
    p = ag.parameter(np.ones(2))
    opt = Adam({"p": p}, lr=0.1)
    ag.mse_to(p, np.zeros(2)).backward()
    assert p.grad is not None
    opt.zero_grad()
    assert p.grad is None
