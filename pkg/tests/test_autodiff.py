import zlib

import numpy as np
import pytest

import copulashift.autodiff as ad
from copulashift.errors import ContractViolation, DomainError, ShapeError


class TestTensor:
    def test_scalar_becomes_1x1(self):
        t = ad.tensor(3.5)
        assert t.shape == (1, 1)
        assert t[0, 0] == 3.5

    def test_vector_becomes_column(self):
        t = ad.tensor([1.0, 2.0, 3.0])
        assert t.shape == (3, 1)

    def test_matrix_kept(self):
        t = ad.tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.shape == (2, 2)

    def test_readonly(self):
        t = ad.tensor([[1.0]])
        with pytest.raises(ValueError):
            t[0, 0] = 2.0

    def test_does_not_freeze_caller_array(self):
        src = np.zeros((2, 2))
        ad.tensor(src)
        src[0, 0] = 1.0  # must still be writable

    def test_rejects_rank3(self):
        with pytest.raises(ContractViolation):
            ad.tensor(np.zeros((2, 2, 2)))

    def test_rejects_nan_and_inf(self):
        with pytest.raises(DomainError):
            ad.tensor([np.nan])
        with pytest.raises(DomainError):
            ad.tensor([np.inf])

    def test_rejects_empty(self):
        with pytest.raises(ContractViolation):
            ad.tensor(np.zeros((0, 3)))


class TestForwardValues:
    def test_tanh_zero(self):
        assert ad.tanh(ad.leaf(0.0)).item() == 0.0

    def test_matmul_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        out = ad.matmul(ad.leaf(x), ad.constant(np.eye(3)))
        np.testing.assert_array_equal(out.value, x)

    def test_softmax_uniform(self):
        out = ad.softmax_rows(ad.leaf([[0.0, 0.0]]))
        np.testing.assert_allclose(out.value, [[0.5, 0.5]])

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5))
        a = ad.softmax_rows(ad.leaf(x)).value
        b = ad.softmax_rows(ad.leaf(x + 100.0)).value
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(a.sum(axis=1), np.ones(4), atol=1e-12)

    def test_pairwise_diff(self):
        x = ad.leaf([1.0, 2.0])
        y = ad.leaf([10.0, 20.0, 30.0])
        out = ad.pairwise_diff(x, y)
        np.testing.assert_array_equal(
            out.value, [[-9.0, -19.0, -29.0], [-8.0, -18.0, -28.0]])

    def test_scalar_broadcast(self):
        x = ad.leaf([[1.0, 2.0], [3.0, 4.0]])
        out = 2.0 * x + 1.0
        np.testing.assert_array_equal(out.value, [[3.0, 5.0], [7.0, 9.0]])

    def test_ndarray_left_operand_defers_to_node(self):
        arr = np.array([[1.0, 2.0]])
        out = arr * ad.leaf([[3.0, 4.0]])
        assert isinstance(out, ad.Node)
        np.testing.assert_array_equal(out.value, [[3.0, 8.0]])

    def test_take_rows_and_cols(self):
        x = ad.leaf(np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(
            ad.take_rows(x, [2, 0]).value, [[8, 9, 10, 11], [0, 1, 2, 3]])
        np.testing.assert_array_equal(
            ad.take_cols(x, [1, 1]).value, [[1, 1], [5, 5], [9, 9]])


class TestGradients:
    def test_square_at_three(self):
        # d/dx x^2 = 2x = 6 at x = 3
        x = ad.leaf(3.0)
        ad.backward(x * x)
        np.testing.assert_allclose(x.grad, [[6.0]])

    def test_mean_tanh_gradient(self):
        x = ad.leaf([0.0, 0.0])
        ad.backward(ad.mean(ad.tanh(x)))
        # d/dx_i mean(tanh(x)) = (1 - tanh(x_i)^2) / n = 0.5 at 0
        np.testing.assert_allclose(x.grad, [[0.5], [0.5]])

    def test_fanout_accumulates(self):
        x = ad.leaf(2.0)
        y = x * x + x  # dy/dx = 2x + 1 = 5
        ad.backward(y)
        np.testing.assert_allclose(x.grad, [[5.0]])

    def test_two_layer_mlp_cross_entropy_fd(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(4, 3))
        labels = np.array([0, 1, 0, 1])
        onehot = np.eye(2)[labels]
        W1 = rng.normal(size=(3, 5)) * 0.5
        b1 = np.zeros((1, 5))
        W2 = rng.normal(size=(5, 2)) * 0.5
        b2 = np.zeros((1, 2))

        def loss(w1, b1n, w2, b2n):
            h = ad.relu(ad.add_bias(ad.matmul(ad.constant(X), w1), b1n))
            p = ad.softmax_rows(ad.add_bias(ad.matmul(h, w2), b2n))
            picked = ad.total(ad.mul(ad.constant(onehot), ad.log(p)))
            return ad.neg(picked) / float(len(labels))

        err = ad.finite_difference_check(loss, [W1, b1, W2, b2])
        assert err < 1e-5

    def test_repeated_backward_bit_identical(self):
        rng = np.random.default_rng(11)
        x = ad.leaf(rng.normal(size=(6, 2)))
        w = ad.leaf(rng.normal(size=(2, 3)))
        out = ad.mean(ad.exp(ad.neg(ad.absolute(ad.matmul(x, w)))))
        ad.backward(out)
        g1x, g1w = x.grad.copy(), w.grad.copy()
        ad.backward(out)
        assert np.array_equal(g1x, x.grad)
        assert np.array_equal(g1w, w.grad)

    def test_grad_zero_before_backward(self):
        x = ad.leaf([[1.0, 2.0]])
        np.testing.assert_array_equal(x.grad, [[0.0, 0.0]])

    def test_take_cols_duplicate_scatter(self):
        x = ad.leaf([[1.0, 2.0], [3.0, 4.0]])
        out = ad.total(ad.take_cols(x, [0, 0, 1]))
        ad.backward(out)
        np.testing.assert_array_equal(x.grad, [[2.0, 1.0], [2.0, 1.0]])

    def test_relu_subgradient_zero_at_kink(self):
        x = ad.leaf([[0.0]])
        ad.backward(ad.total(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [[0.0]])

    def test_abs_and_sqrt_subgradients_at_zero(self):
        x = ad.leaf([[0.0]])
        ad.backward(ad.total(ad.absolute(x)))
        np.testing.assert_array_equal(x.grad, [[0.0]])
        y = ad.leaf([[0.0]])
        ad.backward(ad.total(ad.sqrt(y)))
        np.testing.assert_array_equal(y.grad, [[0.0]])

    def test_clamp_blocks_gradient_outside(self):
        x = ad.leaf([[-1.0, 0.5, 2.0]])
        ad.backward(ad.total(ad.clamp(x, lo=0.0, hi=1.0)))
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def _shifted(rng, shape, low=-2.0, high=2.0, keep_away=0.0):
    x = rng.uniform(low, high, size=shape)
    if keep_away > 0.0:
        x = np.where(np.abs(x) < keep_away, np.sign(x) * keep_away + x, x)
    return x


UNARY_CASES = {
    "exp": (ad.exp, (-2.0, 2.0), 0.0),
    "log": (ad.log, (0.1, 2.0), 0.0),
    "sqrt": (ad.sqrt, (0.1, 2.0), 0.0),
    "tanh": (ad.tanh, (-2.0, 2.0), 0.0),
    "sin": (ad.sin, (-2.0, 2.0), 0.0),
    "relu": (ad.relu, (-2.0, 2.0), 0.05),
    "abs": (ad.absolute, (-2.0, 2.0), 0.05),
    "neg": (ad.neg, (-2.0, 2.0), 0.0),
    # mean(softmax) is constant, so read the rows out through fixed weights
    "softmax": (lambda n: ad.mul(ad.softmax_rows(n), ad.constant(_SOFTMAX_W)),
                (-2.0, 2.0), 0.0),
}

# softmax rows couple every entry, so some Jacobian entries are near zero and
# their relative-to-central error is dominated by finite-difference noise
_CASE_TOL = {"softmax": 1e-4}

_SOFTMAX_W = np.linspace(0.5, 2.0, 12).reshape(3, 4)


class TestFiniteDifferenceSweep:
    """Every primitive agrees with central differences on random inputs."""

    @pytest.mark.parametrize("name", sorted(UNARY_CASES))
    def test_unary(self, name):
        fn, (lo, hi), keep_away = UNARY_CASES[name]
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        for trial in range(25):
            x = _shifted(rng, (3, 4), lo, hi, keep_away)
            err = ad.finite_difference_check(lambda a: ad.mean(fn(a)), [x])
            tol = _CASE_TOL.get(name, 1e-5)
            assert err < tol, f"{name} trial {trial}: {err}"

    @pytest.mark.parametrize("name,fn", [
        ("add", ad.add), ("sub", ad.sub), ("mul", ad.mul), ("div", ad.div),
    ])
    def test_binary_elementwise(self, name, fn):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        for _ in range(25):
            a = _shifted(rng, (3, 4))
            b = _shifted(rng, (3, 4), keep_away=0.2 if name == "div" else 0.0)
            err = ad.finite_difference_check(lambda x, y: ad.mean(fn(x, y)), [a, b])
            assert err < 1e-5
            # scalar broadcast on the right
            s = _shifted(rng, (1, 1), keep_away=0.2 if name == "div" else 0.0)
            err = ad.finite_difference_check(lambda x, y: ad.mean(fn(x, y)), [a, s])
            assert err < 1e-5

    def test_matmul_transpose_bias(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            a = rng.uniform(-2, 2, size=(3, 4))
            b = rng.uniform(-2, 2, size=(4, 2))
            bias = rng.uniform(-2, 2, size=(1, 2))

            def build(x, y, z):
                return ad.mean(ad.add_bias(ad.matmul(x, y), z))

            assert ad.finite_difference_check(build, [a, b, bias]) < 1e-6
            assert ad.finite_difference_check(
                lambda x: ad.mean(ad.transpose(x)), [a]) < 1e-6

    def test_reductions_and_gather(self):
        rng = np.random.default_rng(43)
        for _ in range(25):
            a = rng.uniform(-2, 2, size=(4, 3))
            for red in (ad.total, ad.mean,
                        lambda n: ad.mean(ad.sum_rows(n)),
                        lambda n: ad.mean(ad.mean_rows(n)),
                        lambda n: ad.mean(ad.take_rows(n, [0, 0, 2])),
                        lambda n: ad.mean(ad.take_cols(n, [1, 1, 2]))):
                assert ad.finite_difference_check(lambda x: _as_scalar(red(x)), [a]) < 1e-6

    def test_pairwise_diff_kernel(self):
        rng = np.random.default_rng(44)
        for _ in range(25):
            x = rng.uniform(-2, 2, size=(4, 1))
            y = rng.uniform(-2, 2, size=(3, 1))

            def build(a, b):
                d = ad.pairwise_diff(a, b)
                return ad.total(ad.exp(ad.neg(d * d)))

            assert ad.finite_difference_check(build, [x, y]) < 1e-6

    def test_clamp_inside_region(self):
        rng = np.random.default_rng(45)
        for _ in range(25):
            # keep samples strictly inside so FD is valid
            x = rng.uniform(-0.8, 0.8, size=(3, 3))
            err = ad.finite_difference_check(
                lambda a: ad.mean(ad.clamp(a, lo=-1.0, hi=1.0)), [x])
            assert err < 1e-6


def _as_scalar(node):
    return node if node.shape == (1, 1) else ad.mean(node)


class TestErrorContracts:
    def test_shape_error_names_op_and_shapes(self):
        with pytest.raises(ShapeError) as ei:
            ad.add(ad.leaf(np.zeros((2, 3))), ad.leaf(np.zeros((3, 2))))
        msg = str(ei.value)
        assert "add" in msg and "(2, 3)" in msg and "(3, 2)" in msg

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(ad.leaf(np.zeros((2, 3))), ad.leaf(np.zeros((2, 3))))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ad.log(ad.leaf([[1.0, 0.0]]))
        with pytest.raises(DomainError):
            ad.log(ad.leaf([[-1.0]]))

    def test_div_by_zero(self):
        with pytest.raises(DomainError):
            ad.div(ad.leaf(1.0), ad.leaf(0.0))

    def test_sqrt_negative(self):
        with pytest.raises(DomainError):
            ad.sqrt(ad.leaf(-0.5))

    def test_backward_requires_scalar(self):
        with pytest.raises(ContractViolation):
            ad.backward(ad.leaf([[1.0, 2.0]]))

    def test_fd_check_rejects_bad_step(self):
        with pytest.raises(ContractViolation):
            ad.finite_difference_check(lambda x: ad.mean(x), [np.ones((2, 2))], step=0.0)
        with pytest.raises(ContractViolation):
            ad.finite_difference_check(lambda x: ad.mean(x), [np.ones((2, 2))], step=-1e-6)

    def test_item_requires_scalar(self):
        with pytest.raises(ContractViolation):
            ad.leaf([[1.0, 2.0]]).item()
