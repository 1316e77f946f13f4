import threading

import mpmath
import numpy as np
import numpy.testing as npt
import pytest

import castream.tensor as T
from castream.errors import DimensionError, MaskError, NonFiniteError
from castream.tensor import GradTape, Tensor, checked_mode


def finite_diff(f, x, eps=1e-6):
    """Central differences of a scalar function of one numpy array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal((a @ b).data, b.data)

    def test_permutation(self):
        a = Tensor([[1.0, 0.0], [0.0, 1.0]])
        b = Tensor([[0.0, 1.0], [1.0, 0.0]])
        npt.assert_array_equal((a @ b).data, [[0.0, 1.0], [1.0, 0.0]])

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        want = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    want[i, j] += a[i, k] * b[k, j]
        got = (Tensor(a) @ Tensor(b)).data
        npt.assert_allclose(got, want, atol=1e-12, rtol=0)

    def test_shape_mismatch_names_both(self):
        with pytest.raises(DimensionError) as err:
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 2)))
        assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = Tensor(rng.normal(size=(3, 4)))
            b = Tensor(rng.normal(size=(4, 5)))
            c = Tensor(rng.normal(size=(5, 2)))
            npt.assert_allclose(((a @ b) @ c).data, (a @ (b @ c)).data, atol=1e-10)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0]))
        npt.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_stabilization(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        npt.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)
        assert np.isfinite(out.data).all()

    def test_high_precision_oracle(self):
        with mpmath.workdps(50):
            exps = [mpmath.e**x for x in (1, 2, 3)]
            total = sum(exps)
            want = np.array([float(e / total) for e in exps])
        out = T.softmax(Tensor([1.0, 2.0, 3.0]))
        npt.assert_allclose(out.data, want, atol=1e-12, rtol=0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            x = rng.normal(size=(4, 6))
            shift = rng.normal()
            a = T.softmax(Tensor(x), axis=-1).data
            b = T.softmax(Tensor(x + shift), axis=-1).data
            npt.assert_allclose(a, b, atol=1e-10)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        out = T.softmax(Tensor(rng.normal(size=(8, 9))), axis=-1)
        npt.assert_allclose(out.data.sum(axis=-1), np.ones(8), atol=1e-6)
        assert (out.data > 0).all()

    def test_empty_axis(self):
        with pytest.raises(DimensionError):
            T.softmax(Tensor(np.zeros((3, 0))))

    def test_fully_masked_row(self):
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(MaskError) as err:
            T.softmax(Tensor(np.zeros((2, 2))), mask=mask)
        assert "1" in str(err.value)


class TestSigmoid:
    def test_values(self):
        out = T.sigmoid(Tensor([0.0, -4.0, 2.0]))
        assert out.data[0] == 0.5
        npt.assert_allclose(out.data[1], 1.0 / (1.0 + np.exp(4.0)), rtol=1e-12)
        npt.assert_allclose(out.data[1], 0.017986, atol=5e-7)
        npt.assert_allclose(out.data[2], 0.880797, atol=5e-7)

    def test_complement_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(scale=5.0, size=50)
        s = T.sigmoid(Tensor(x)).data + T.sigmoid(Tensor(-x)).data
        npt.assert_allclose(s, np.ones(50), atol=1e-12)

    def test_stable_in_tails(self):
        out = T.sigmoid(Tensor([700.0, -700.0]))
        assert out.data[0] == 1.0
        assert 0.0 < out.data[1] < 1e-300 or out.data[1] == pytest.approx(0.0, abs=1e-300)
        assert np.isfinite(out.data).all()


class TestBackward:
    """Every primitive's backward vs central differences, randomized inputs."""

    CASES = {
        "add": lambda x, y: (x + y).sum(),
        "sub": lambda x, y: (x - y).sum(),
        "mul": lambda x, y: (x * y).sum(),
        "div": lambda x, y: (x / (y * y + 1.0)).sum(),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_binary(self, name):
        f = self.CASES[name]
        rng = np.random.default_rng(hash(name) % 2**32)
        xd = rng.normal(size=10)
        yd = rng.normal(size=10)
        x, y = Tensor(xd.copy(), requires_grad=True), Tensor(yd.copy(), requires_grad=True)
        with GradTape() as tape:
            out = f(x, y)
        tape.backward(out)
        gx = finite_diff(lambda a: float(f(Tensor(a), Tensor(yd)).data), xd.copy())
        gy = finite_diff(lambda a: float(f(Tensor(xd), Tensor(a)).data), yd.copy())
        npt.assert_allclose(x.grad, gx, rtol=1e-6, atol=1e-8)
        npt.assert_allclose(y.grad, gy, rtol=1e-6, atol=1e-8)

    UNARY = {
        "neg": (lambda x: (-x).sum(), None),
        "exp": (lambda x: T.exp(x).sum(), None),
        "log": (lambda x: T.log(x).sum(), "positive"),
        "sigmoid": (lambda x: T.sigmoid(x).sum(), None),
        "tanh": (lambda x: T.tanh(x).sum(), None),
        "relu": (lambda x: T.relu(x).sum(), "offset"),
        "pow": (lambda x: (x**3.0).sum(), None),
        "pow_frac": (lambda x: (x**-0.5).sum(), "positive"),
        "sum_axis": (lambda x: (x.reshape(2, 5).sum(axis=0) ** 2.0).sum(), None),
        "mean": (lambda x: (x.reshape(2, 5).mean(axis=1) ** 2.0).sum(), None),
        "cumsum": (lambda x: (T.cumsum(x, 0) ** 2.0).sum(), None),
        "softmax": (lambda x: (T.softmax(x) ** 2.0).sum(), None),
        "log_softmax": (lambda x: (T.log_softmax(x) ** 2.0).sum(), None),
        "reshape": (lambda x: (x.reshape(5, 2) ** 2.0).sum(), None),
        "swapaxes": (lambda x: (x.reshape(5, 2).swapaxes(0, 1) ** 2.0).sum(), None),
        "getitem": (lambda x: (x[2:7] ** 2.0).sum(), None),
        "getitem_fancy": (lambda x: (x[np.array([1, 3, 3])] ** 2.0).sum(), None),
    }

    @pytest.mark.parametrize("name", sorted(UNARY))
    def test_unary(self, name):
        f, domain = self.UNARY[name]
        rng = np.random.default_rng(hash(name) % 2**32)
        xd = rng.normal(size=10)
        if domain == "positive":
            xd = np.abs(xd) + 0.5
        elif domain == "offset":
            xd = xd + np.sign(xd) * 0.2  # keep clear of the relu kink
        x = Tensor(xd.copy(), requires_grad=True)
        with GradTape() as tape:
            out = f(x)
        tape.backward(out)
        g = finite_diff(lambda a: float(f(Tensor(a)).data), xd.copy())
        npt.assert_allclose(x.grad, g, rtol=1e-6, atol=1e-8)

    def test_matmul_backward(self):
        rng = np.random.default_rng(12)
        ad = rng.normal(size=(3, 4))
        bd = rng.normal(size=(4, 2))
        a = Tensor(ad.copy(), requires_grad=True)
        b = Tensor(bd.copy(), requires_grad=True)
        with GradTape() as tape:
            out = ((a @ b) ** 2.0).sum()
        tape.backward(out)
        ga = finite_diff(lambda m: float(((Tensor(m) @ Tensor(bd)) ** 2.0).sum().data), ad.copy())
        gb = finite_diff(lambda m: float(((Tensor(ad) @ Tensor(m)) ** 2.0).sum().data), bd.copy())
        npt.assert_allclose(a.grad, ga, rtol=1e-6, atol=1e-8)
        npt.assert_allclose(b.grad, gb, rtol=1e-6, atol=1e-8)

    def test_concat_backward(self):
        rng = np.random.default_rng(13)
        ad, bd = rng.normal(size=4), rng.normal(size=6)
        a = Tensor(ad.copy(), requires_grad=True)
        b = Tensor(bd.copy(), requires_grad=True)
        with GradTape() as tape:
            out = (T.concat([a, b], axis=0) ** 2.0).sum()
        tape.backward(out)
        npt.assert_allclose(a.grad, 2 * ad, rtol=1e-12)
        npt.assert_allclose(b.grad, 2 * bd, rtol=1e-12)

    def test_broadcast_backward(self):
        rng = np.random.default_rng(14)
        ad = rng.normal(size=(3, 4))
        bd = rng.normal(size=4)
        a = Tensor(ad.copy(), requires_grad=True)
        b = Tensor(bd.copy(), requires_grad=True)
        with GradTape() as tape:
            out = ((a + b) * (a * b)).sum()
        tape.backward(out)
        gb = finite_diff(
            lambda m: float(((Tensor(ad) + Tensor(m)) * (Tensor(ad) * Tensor(m))).sum().data),
            bd.copy(),
        )
        npt.assert_allclose(b.grad, gb, rtol=1e-6, atol=1e-8)
        assert a.grad.shape == ad.shape


class TestTape:
    def test_reused_leaf_accumulates_once(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        with GradTape() as tape:
            y = (x * x + x).sum()  # d/dx = 2x + 1
        tape.backward(y)
        npt.assert_allclose(x.grad, [7.0])

    def test_diamond_graph(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with GradTape() as tape:
            a = x * 3.0
            b = x * 5.0
            y = (a * b).sum()  # 15 x^2 -> grad 30 x
        tape.backward(y)
        npt.assert_allclose(x.grad, [60.0])

    def test_no_tape_records_nothing(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = (x * x).sum()
        assert y.grad is None and x.grad is None

    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with GradTape() as tape:
            y = x * 2.0
        with pytest.raises(DimensionError):
            tape.backward(y)

    def test_parallel_tapes_in_threads(self):
        results = {}

        def work(key, scale):
            x = Tensor(np.arange(1.0, 5.0) * scale, requires_grad=True)
            with GradTape() as tape:
                y = (x * x).sum()
            tape.backward(y)
            results[key] = x.grad.copy()

        threads = [threading.Thread(target=work, args=(i, float(i + 1))) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for i in range(4):
            npt.assert_allclose(results[i], 2.0 * np.arange(1.0, 5.0) * (i + 1))


class TestCheckedMode:
    def test_nonfinite_raises(self):
        with pytest.raises(NonFiniteError):
            T.log(Tensor([0.0]))

    def test_toggle_off(self):
        with checked_mode(False):
            out = T.log(Tensor([0.0]))
            assert np.isneginf(out.data[0])
        with pytest.raises(NonFiniteError):
            T.exp(Tensor([1000.0]))

    def test_invariant_shape_matches(self):
        t = Tensor(np.zeros((2, 3)), requires_grad=True)
        with GradTape() as tape:
            y = (t * 2.0).sum()
        tape.backward(y)
        assert t.grad.shape == t.shape
        assert np.prod(t.shape) == t.data.size
