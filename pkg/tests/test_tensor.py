import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hima.errors import NumericsError, ShapeError
from hima.gradcheck import max_relative_error
from hima.tensor import (Tensor, concat, finite_checks, grad_enabled, matmul,
                         no_grad, real32, real64, sigmoid, softplus, stack)


def t64(arr, requires_grad=False):
    return Tensor(np.asarray(arr), requires_grad=requires_grad, dtype=real64)


class TestBasics:
    def test_dtype_normalization(self):
        assert Tensor([1, 2, 3]).dtype == real64
        assert Tensor(np.zeros(3, dtype=np.float32)).dtype == real32

    def test_complex_rejected(self):
        with pytest.raises(TypeError):
            Tensor(np.zeros(3, dtype=complex))

    def test_item_and_shape(self):
        x = t64([[1.0, 2.0]])
        assert x.shape == (1, 2)
        with pytest.raises(ShapeError):
            x.item()
        assert x.sum().item() == 3.0

    def test_backward_non_scalar_errors(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            (x * 2).backward()

    def test_no_grad_blocks_graph(self):
        x = t64([1.0], requires_grad=True)
        with no_grad():
            assert not grad_enabled()
            y = x * 3
        assert y._vjp is None

    def test_finite_checks(self):
        x = t64([1.0, 0.0])
        with finite_checks(), np.errstate(invalid="ignore"):
            with pytest.raises(NumericsError):
                (x / x).sum()


class TestGrads:
    def test_sum_of_squares_grad_is_2x(self):
        x = t64([1.0, -2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_grad_accumulates_until_cleared(self):
        x = t64([1.5], requires_grad=True)
        (x * x).sum().backward()
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 4 * x.data)
        x.zero_grad()
        assert x.grad is None

    def test_broadcast_binary_ops(self, rng):
        a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True, dtype=real64)
        b = Tensor(rng.standard_normal((3, 1)), requires_grad=True, dtype=real64)
        err = max_relative_error(lambda: ((a * b + b) / (a.abs() + 2.0)).sum(), [a, b])
        assert err < 1e-6

    def test_elementwise_chain(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, (4, 5)), requires_grad=True, dtype=real64)
        err = max_relative_error(
            lambda: (x.log().exp().sqrt() + (-x) + x**3).mean().reshape(()), [x])
        assert err < 1e-6

    def test_reductions_and_std(self, rng):
        x = Tensor(rng.standard_normal((3, 6)), requires_grad=True, dtype=real64)
        err = max_relative_error(
            lambda: (x.std(axis=1).sum() + x.mean(axis=0, keepdims=True).sum()
                     + x.max(axis=1).sum()), [x])
        assert err < 1e-6

    def test_shape_ops(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True, dtype=real64)

        def fn():
            y = x.reshape(6, 4).transpose((1, 0)).flip(0)
            return (y[1:3] * y[0:2]).sum()

        assert max_relative_error(fn, [x]) < 1e-6

    def test_concat_chunk_stack(self, rng):
        a = Tensor(rng.standard_normal((2, 4)), requires_grad=True, dtype=real64)
        b = Tensor(rng.standard_normal((2, 4)), requires_grad=True, dtype=real64)

        def fn():
            c = concat([a, b], axis=1)
            lo, hi = c.chunk(2, axis=0)
            s = stack([lo, hi], axis=0)
            return (s * s * s).sum()

        assert max_relative_error(fn, [a, b]) < 1e-6

    def test_matmul_batched_broadcast(self, rng):
        a = Tensor(rng.standard_normal((3, 2, 4, 5)), requires_grad=True, dtype=real64)
        b = Tensor(rng.standard_normal((3, 1, 5, 2)), requires_grad=True, dtype=real64)
        err = max_relative_error(lambda: (matmul(a, b) ** 2).sum(), [a, b])
        assert err < 1e-6

    def test_sigmoid_softplus(self, rng):
        x = Tensor(rng.standard_normal((8,)) * 3, requires_grad=True, dtype=real64)
        err = max_relative_error(lambda: (sigmoid(x) * softplus(x)).sum(), [x])
        assert err < 1e-6

    def test_chunk_uneven_errors(self):
        with pytest.raises(ShapeError):
            t64(np.zeros((5,))).chunk(2, axis=0)

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeError):
            matmul(t64(np.zeros((2, 3))), t64(np.zeros((4, 2))))

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            t64(np.zeros((2, 2))).sum(axis=5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_std_matches_numpy_population(values):
    arr = np.asarray(values, dtype=np.float64)
    got = Tensor(arr).std().item()
    assert got == pytest.approx(arr.std(), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4))
def test_dag_reuse_accumulates(n, m):
    x = Tensor(np.full((n, m), 2.0), requires_grad=True, dtype=real64)
    y = x * 3.0
    (y + y).sum().backward()  # y used twice: grads must add
    np.testing.assert_allclose(x.grad, np.full((n, m), 6.0))
