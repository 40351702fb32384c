import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pignpi import autodiff as ad
from pignpi.activations import ActivationKind, activation_d1, activation_d2, activation_value
from pignpi.errors import ContractViolation

from oracles import central_diff, rel_err


def _scalar_grad(fn, x):
    v = ad.Value(x, requires_grad=True)
    (g,) = ad.grad(fn(v), [v])
    return g.data


UNARY = {
    "exp": (ad.exp, lambda x: x),
    "log": (ad.log, lambda x: np.abs(x) + 0.5),
    "sqrt": (ad.sqrt, lambda x: np.abs(x) + 0.5),
    "square": (ad.square, lambda x: x),
    "pow3": (lambda v: ad.power(v, 3.0), lambda x: x),
    "neg": (ad.neg, lambda x: x),
    "abs": (ad.vabs, lambda x: x + np.sign(x) * 0.1),
    "recip": (lambda v: 1.0 / v, lambda x: np.abs(x) + 0.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name, rng):
    op, domain = UNARY[name]
    x = domain(rng.standard_normal((3, 4)))
    w = rng.standard_normal((3, 4))

    def f(a):
        return float(np.sum(w * op(ad.Value(a)).data))

    g = _scalar_grad(lambda v: ad.vsum(op(v) * w), x)
    assert rel_err(g, central_diff(f, x)) < 1e-7


def test_broadcasting_binary_ops(rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal(3) + 3.0
    for op in (ad.add, ad.sub, ad.mul, ad.div):
        va = ad.Value(a, requires_grad=True)
        vb = ad.Value(b, requires_grad=True)
        out = ad.vsum(ad.square(op(va, vb)))
        ga, gb = ad.grad(out, [va, vb])
        fa = central_diff(lambda x: float(np.sum(op(ad.Value(x), ad.Value(b)).data ** 2)), a)
        fb = central_diff(lambda x: float(np.sum(op(ad.Value(a), ad.Value(x)).data ** 2)), b)
        assert ga.shape == a.shape and gb.shape == b.shape
        assert rel_err(ga.data, fa) < 1e-7
        assert rel_err(gb.data, fb) < 1e-7


def test_matmul_gather_segment_concat(rng):
    x = rng.standard_normal((5, 3))
    w = rng.standard_normal((3, 2))
    idx = np.array([0, 2, 2, 4, 1, 0])
    seg = np.array([1, 0, 1, 2, 2, 0])

    def build(xv, wv):
        h = ad.gather_rows(xv @ wv, idx)
        s = ad.segment_sum(h, seg, 3)
        c = ad.concat([s, ad.transpose(s)[0:1].reshape(3, 1)], axis=1)
        return ad.vsum(ad.square(c)) + ad.mean(c[:, 1])

    vx = ad.Value(x, requires_grad=True)
    vw = ad.Value(w, requires_grad=True)
    gx, gw = ad.grad(build(vx, vw), [vx, vw])
    fx = central_diff(lambda a: build(ad.Value(a), ad.Value(w)).item(), x)
    fw = central_diff(lambda a: build(ad.Value(x), ad.Value(a)).item(), w)
    assert rel_err(gx.data, fx) < 1e-7
    assert rel_err(gw.data, fw) < 1e-7


@pytest.mark.parametrize("kind", [k for k in ActivationKind if k.smooth])
def test_activation_derivatives_closed_form(kind, rng):
    x = rng.uniform(-4, 4, 50)
    h = 1e-5
    d1 = (activation_value(kind, x + h) - activation_value(kind, x - h)) / (2 * h)
    d2 = (activation_d1(kind, x + h) - activation_d1(kind, x - h)) / (2 * h)
    np.testing.assert_allclose(activation_d1(kind, x), d1, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(activation_d2(kind, x), d2, rtol=1e-6, atol=1e-8)


def test_double_backward_of_activation(rng):
    # d/dx of (d/dx sum tanh(a*x)) = a^2 * tanh''(a*x)
    x = rng.standard_normal(6)
    a = 1.7
    vx = ad.Value(x, requires_grad=True)
    (g,) = ad.grad(ad.vsum(ad.activation(vx * a, "tanh")), [vx], create_graph=True)
    (gg,) = ad.grad(ad.vsum(g), [vx])
    expected = a * a * activation_d2(ActivationKind.TANH, a * x)
    np.testing.assert_allclose(gg.data, expected, rtol=1e-12)


def test_third_order_is_refused():
    x = ad.Value(np.array([0.3]), requires_grad=True)
    (g,) = ad.grad(ad.vsum(ad.activation(x, "silu")), [x], create_graph=True)
    (gg,) = ad.grad(ad.vsum(g), [x], create_graph=True)
    with pytest.raises(NotImplementedError):
        ad.grad(ad.vsum(gg), [x])


def test_non_scalar_output_needs_cotangent():
    x = ad.Value(np.ones(3), requires_grad=True)
    with pytest.raises(ContractViolation):
        ad.grad(x * 2.0, [x])
    (g,) = ad.grad(x * 2.0, [x], grad_output=np.array([1.0, 0.0, 3.0]))
    np.testing.assert_array_equal(g.data, [2.0, 0.0, 6.0])


def test_unreached_inputs_get_zeros_and_no_grad_records_nothing():
    x = ad.Value(np.ones(2), requires_grad=True)
    y = ad.Value(np.ones((2, 2)), requires_grad=True)
    gx, gy = ad.grad(ad.vsum(x * 3.0), [x, y])
    np.testing.assert_array_equal(gy.data, np.zeros((2, 2)))
    with ad.no_grad():
        z = x * 2.0
    assert not z.requires_grad and z.parents == ()


def test_replay_recomputes_after_leaf_change(rng):
    x = ad.Value(rng.standard_normal(4), requires_grad=True)
    out = ad.vsum(ad.exp(x) * x)
    x.data = np.zeros(4)
    assert ad.replay(out) == pytest.approx(0.0)


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (2,), elements=finite))
def test_linearity_of_gradients(x, c):
    # grad of sum(c * x) is c broadcast, independent of x
    vx = ad.Value(x, requires_grad=True)
    (g,) = ad.grad(ad.vsum(vx * c), [vx])
    np.testing.assert_array_equal(g.data, np.broadcast_to(c, x.shape))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4,), elements=finite))
def test_gradient_accumulates_over_reuse(x):
    vx = ad.Value(x, requires_grad=True)
    (g,) = ad.grad(ad.vsum(vx * vx + vx), [vx])
    np.testing.assert_allclose(g.data, 2 * x + 1, rtol=1e-15, atol=1e-15)
