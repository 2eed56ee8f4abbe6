import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lshyper import autodiff as ad
from lshyper.nets import MlpSpec
from lshyper.node import DataModel, predict
from lshyper.sampler import em_step


def fd_grad(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol, atol=1e-8):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


UNARY = {
    "tanh": ad.tanh,
    "softplus": ad.softplus,
    "exp": ad.exp,
    "square": ad.square,
    "neg": ad.neg,
    "scale": lambda a: ad.scale(a, -2.5),
    "sum_axis0": lambda a: ad.sum(a, axis=0),
    "mean": ad.mean,
    "logsumexp": lambda a: ad.logsumexp(a, axis=-1),
    "reshape": lambda a: ad.reshape(a, (-1,)),
    "swapaxes": lambda a: ad.swapaxes(a, 0, 1),
    "take_basic": lambda a: ad.take(a, (slice(None), slice(1, 3))),
    "take_fancy": lambda a: ad.take(a, (np.array([0, 0, 2]), np.array([1, 1, 3]))),
    "broadcast": lambda a: ad.broadcast_to(a, (2,) + a.shape),
}

BINARY = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
    "div": lambda a, b: ad.div(a, ad.add(ad.square(b), 1.0)),
    "matmul": lambda a, b: ad.matmul(a, ad.swapaxes(b, 0, 1)),
    "concat": lambda a, b: ad.concat([a, b], axis=0),
}


class TestBasics:
    def test_square_derivative(self):
        assert ad.grad(lambda x: ad.square(x), np.array(3.0)) == pytest.approx(6.0)

    def test_constant_gives_zero_gradient(self):
        g = ad.grad(lambda x: 4.2, np.array([1.0, -2.0]))
        np.testing.assert_array_equal(g, [0.0, 0.0])

    def test_unreachable_leaf_has_zero_adjoint(self):
        with ad.Tape() as tape:
            a = tape.leaf(np.array([1.0, 2.0]))
            b = tape.leaf(np.array([3.0]))
            tape.backward(ad.sum(ad.square(a)))
        np.testing.assert_array_equal(b.gradient(), [0.0])
        np.testing.assert_array_equal(a.gradient(), [2.0, 4.0])

    def test_nodes_recorded_in_topological_order(self):
        with ad.Tape() as tape:
            a = tape.leaf(np.ones(3))
            b = ad.exp(ad.mul(a, a))
            ad.sum(ad.add(b, a))
        for node in tape.nodes:
            for p in node.parents:
                assert p.index < node.index

    def test_softplus_is_overflow_safe(self):
        with ad.Tape():
            x = ad.Tape.current().leaf(np.array([-800.0, 0.0, 800.0]))
            y = ad.softplus(x)
        np.testing.assert_allclose(y.value, [0.0, np.log(2.0), 800.0], atol=1e-12)

    def test_non_finite_value_raises(self):
        with pytest.raises(ad.NonFiniteError):
            ad.value_and_grad(lambda x: ad.sum(ad.log(x)), np.array([-1.0, 1.0]))

    def test_operator_overloads(self):
        def f(x):
            return ad.sum((x * 2.0 + 1.0) / (x - 3.0) - x[1])

        x = np.array([0.5, 1.5])
        val, (g,) = ad.value_and_grad(f, x)
        plain = lambda v: np.sum((v * 2 + 1) / (v - 3) - v[1])  # noqa: E731
        assert val == pytest.approx(plain(x))
        assert_grad_close(g, fd_grad(plain, x), 1e-6)

    def test_plain_arrays_pass_through(self):
        out = ad.add(np.ones(2), np.ones(2))
        assert isinstance(out, np.ndarray)


class TestPrimitiveGradients:
    @pytest.mark.parametrize("name", sorted(UNARY))
    def test_unary(self, name):
        op = UNARY[name]
        rng = np.random.default_rng(abs(hash(name)) % 2**32)
        x = rng.uniform(-2, 2, (3, 4))
        w = rng.standard_normal(np.asarray(op(x)).shape)

        def f(v):
            return ad.sum(ad.mul(op(v), w))

        g = ad.grad(f, x)
        num = fd_grad(lambda v: float(np.sum(np.asarray(op(v)) * w)), x)
        assert_grad_close(g, num, 1e-6)

    @pytest.mark.parametrize("name", sorted(BINARY))
    def test_binary(self, name):
        op = BINARY[name]
        rng = np.random.default_rng(7)
        a, b = rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (3, 4))
        w = rng.standard_normal(np.asarray(op(a, b)).shape)
        ga, gb = ad.value_and_grad(lambda p, q: ad.sum(ad.mul(op(p, q), w)), a, b)[1]
        assert_grad_close(ga, fd_grad(lambda v: float(np.sum(np.asarray(op(v, b)) * w)), a), 1e-6)
        assert_grad_close(gb, fd_grad(lambda v: float(np.sum(np.asarray(op(a, v)) * w)), b), 1e-6)

    def test_log(self):
        x = np.random.default_rng(1).uniform(0.2, 2, 5)
        assert_grad_close(ad.grad(lambda v: ad.sum(ad.log(v)), x), 1 / x, 1e-12)

    def test_broadcasting_reduces_gradients(self):
        a = np.arange(3.0)
        b = np.ones((4, 3))
        ga, gb = ad.value_and_grad(lambda p, q: ad.sum(ad.mul(p, q)), a, b)[1]
        np.testing.assert_allclose(ga, 4 * np.ones(3))
        np.testing.assert_allclose(gb, np.broadcast_to(a, (4, 3)))

    def test_batched_matmul(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))
        ga, gb = ad.value_and_grad(lambda p, q: ad.sum(ad.tanh(ad.matmul(p, q))), a, b)[1]
        assert_grad_close(ga, fd_grad(lambda v: np.tanh(v @ b).sum(), a), 1e-6)
        assert_grad_close(gb, fd_grad(lambda v: np.tanh(a @ v).sum(), b), 1e-6)


class TestLinearity:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
    def test_gradient_is_linear(self, a, b, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, 4)

        def f(v):
            return ad.sum(ad.tanh(v))

        def g(v):
            return ad.sum(ad.square(ad.exp(v)))

        combo = ad.grad(lambda v: ad.add(ad.scale(f(v), a), ad.scale(g(v), b)), x)
        np.testing.assert_allclose(combo, a * ad.grad(f, x) + b * ad.grad(g, x), rtol=1e-12, atol=1e-12)


class TestUnrolledLoops:
    def test_heun_unroll_200_steps(self):
        model = DataModel(MlpSpec.build(1, (4,), 1, "tanh"), 1, h0=(0.3,))
        p = np.random.default_rng(0).uniform(-1, 1, model.n_params)
        times = np.linspace(0, 2, 201)

        def f(v):
            y = predict(model, v, times, model.initial_state())
            return ad.sum(ad.square(y))

        num = fd_grad(lambda v: float(ad.value(f(v))), p, h=1e-6)
        np.testing.assert_allclose(ad.grad(f, p), num, rtol=1e-4, atol=1e-8)

    def test_euler_maruyama_unroll_with_frozen_noise(self):
        rng = np.random.default_rng(1)
        dB = rng.standard_normal((200, 3)) * np.sqrt(1e-2)
        w0 = rng.standard_normal(3)

        def f(theta):
            w = w0
            for s in range(200):
                drift = ad.mul(ad.tanh(w), theta)
                w = em_step(w, drift, 1e-2, 1.0, dB[s])
            return ad.sum(ad.square(w))

        theta = rng.uniform(-1, 1, 3)
        num = fd_grad(lambda v: float(ad.value(f(v))), theta)
        np.testing.assert_allclose(ad.grad(f, theta), num, rtol=1e-4)

    def test_relaxation_loglik_gradient_at_mle(self):
        from lshyper.datagen import OuDataConfig, generate_ou_dataset
        from lshyper.loss import LikelihoodSpec, log_likelihood

        data = generate_ou_dataset(OuDataConfig(n_traj=64), 0)
        model = DataModel(MlpSpec((1, 1), ("linear",)), 1, h0=(2.0,))
        sigma = data.values[..., 0].std(axis=0, ddof=1) + 1e-3
        lik = LikelihoodSpec([1.0], sigma)

        def f(v):
            return ad.sum(log_likelihood(data.values, predict(model, ad.reshape(v, (1, 2)), data.times,
                                                              model.initial_state()), lik))

        w = np.array([-7.9, 7.9])
        num = fd_grad(lambda v: float(ad.value(f(v))), w, h=1e-5)
        np.testing.assert_allclose(ad.grad(f, w), num, rtol=1e-5)
