import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpalab.rng import Rng
from rpalab.tensor import Tensor, contract, dropout, gather_last, no_grad, take_rows

from helpers import check_grads, finite_diff_grad, rel_err


def loop_einsum_btr_tk_rk(mu, phi):
    """Independent oracle: explicit-loop expansion of 'btr,tk->rk'."""
    B, T, R = mu.shape
    _, K = phi.shape
    out = np.zeros((R, K))
    for b in range(B):
        for t in range(T):
            for r in range(R):
                for k in range(K):
                    out[r, k] += mu[b, t, r] * phi[t, k]
    return out


class TestContract:
    def test_identity_contraction_preserves_vector(self):
        eye = Tensor(np.eye(2))
        v = Tensor(np.array([3.0, -1.5]))
        out = contract(eye, v, "ij,j->i")
        np.testing.assert_array_equal(out.data, v.data)

    def test_uniform_membership_against_loop_oracle(self):
        mu = Tensor(np.full((1, 2, 2), 0.5))
        phi = Tensor(np.eye(2))
        out = contract(mu, phi, "btr,tk->rk")
        expected = loop_einsum_btr_tk_rk(mu.data, phi.data)
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=0)
        # frozen from the loop oracle above
        np.testing.assert_allclose(out.data, np.full((2, 2), 0.5))

    def test_zero_tensor_contracts_to_zero(self):
        z = Tensor(np.zeros((2, 3, 2)))
        phi = Tensor(np.arange(12.0).reshape(3, 4))
        out = contract(z, phi, "btr,tk->rk")
        assert np.all(out.data == 0.0)

    def test_shape_mismatch_raises(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((4, 5)))
        with pytest.raises(ValueError, match="extent"):
            contract(a, b, "ij,jk->ik")

    def test_same_tensor_both_operands(self):
        rng = Rng(7)
        mu = Tensor(rng.normal((2, 3, 2)), requires_grad=True)
        out = contract(mu, mu, "btr,bsr->bts")
        ref = np.einsum("btr,bsr->bts", mu.data, mu.data)
        np.testing.assert_allclose(out.data, ref)
        check_grads(lambda as_tensor=True: (out_sum(mu) if as_tensor else out_sum(mu).item()),
                    [mu])

    def test_gradient_with_broadcast_batch_axis(self):
        rng = Rng(3)
        mu = Tensor(rng.normal((2, 3, 4)), requires_grad=True)
        phi = Tensor(rng.normal((3, 5)), requires_grad=True)

        def f(as_tensor=True):
            out = contract(mu, phi, "btr,tk->rk")
            loss = (out * out).sum()
            return loss if as_tensor else loss.item()

        check_grads(f, [mu, phi])


def out_sum(mu):
    out = contract(mu, mu, "btr,bsr->bts")
    return (out * out).sum()


class TestSoftmax:
    def test_two_zeros_give_half(self):
        out = Tensor(np.array([[0.0, 0.0]])).softmax_last()
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_shift_invariance_bit_identical(self):
        # Logits and shifts on a 2^-26 grid embed exactly in float64, so the
        # rowwise-max subtraction cancels the shift with zero rounding.
        rng = Rng(11)
        z = np.round(rng.uniform((8, 5), -8, 8) * 2**26) / 2**26
        c = np.round(rng.uniform((8, 1), -64, 64) * 2**26) / 2**26
        a = Tensor(z).softmax_last()
        b = Tensor(z + c).softmax_last()
        assert np.array_equal(a.data, b.data)

    def test_closed_form_row(self):
        # oracle: exp(z_i) / sum exp(z) evaluated directly
        z = np.array([0.0, -0.5])
        expected = np.exp(z) / np.exp(z).sum()
        out = Tensor(z[None]).softmax_last()
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)
        np.testing.assert_allclose(out.data[0], [0.6225, 0.3775], atol=1e-4)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_on_simplex(self, seed):
        x = Rng(seed).normal((4, 7)) * 10.0
        out = Tensor(x).softmax_last()
        np.testing.assert_allclose(out.data.sum(-1), 1.0, atol=1e-12)
        assert np.all(out.data >= 0.0)

    def test_gradient(self):
        rng = Rng(5)
        x = Tensor(rng.normal((3, 4)), requires_grad=True)
        w = Tensor(rng.normal((3, 4)))

        def f(as_tensor=True):
            loss = (x.softmax_last() * w).sum()
            return loss if as_tensor else loss.item()

        check_grads(f, [x])


class TestBackward:
    def test_square_at_three(self):
        theta = Tensor(3.0, requires_grad=True)
        (theta * theta).backward()
        assert theta.grad == pytest.approx(6.0)

    def test_softmax_cross_entropy_two_class(self):
        logits = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
        nll = -gather_last(logits.log_softmax_last(), np.array([0])).sum()
        nll.backward()
        np.testing.assert_allclose(logits.grad, [[-0.5, 0.5]], atol=1e-12)

    def test_backward_non_scalar_raises(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            x.backward()

    def test_backward_detached_raises(self):
        x = Tensor(5.0)
        with pytest.raises(ValueError, match="detached"):
            x.backward()

    def test_detach_blocks_gradient(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * 3.0
        loss = y.detach() * x
        loss.backward()
        assert x.grad == pytest.approx(6.0)  # only the direct factor

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(2.0, requires_grad=True)
        (x * x + x * 3.0).backward()
        assert x.grad == pytest.approx(7.0)

    def test_no_grad_suppresses_tape(self):
        x = Tensor(2.0, requires_grad=True)
        with no_grad():
            y = x * x
        assert not y.requires_grad and y._parents == ()


class TestOpsGradients:
    """Every differentiable op against central finite differences (rtol 1e-3)."""

    @pytest.mark.parametrize("opname", [
        "add", "sub", "mul", "div", "pow", "matmul", "exp", "log", "sqrt",
        "tanh", "sigmoid", "relu", "gelu", "clamp", "nan_to_num", "reshape",
        "transpose", "sum_axis", "mean_axis", "log_softmax", "broadcast_add",
    ])
    def test_op(self, opname):
        rng = Rng(hash(opname) % 2**31)
        a = Tensor(rng.normal((3, 4)) * 0.8 + 1.6, requires_grad=True)  # keep > 0
        b = Tensor(rng.normal((3, 4)) * 0.5 + 1.5, requires_grad=True)
        w = rng.normal((3, 4))

        ops = {
            "add": lambda: a + b,
            "sub": lambda: a - b,
            "mul": lambda: a * b,
            "div": lambda: a / b,
            "pow": lambda: a ** 1.7,
            "matmul": lambda: a @ b.transpose(1, 0),
            "exp": lambda: a.exp(),
            "log": lambda: a.log(),
            "sqrt": lambda: a.sqrt(),
            "tanh": lambda: a.tanh(),
            "sigmoid": lambda: a.sigmoid(),
            "relu": lambda: a - 1.6,  # center near zero, see below
            "gelu": lambda: (a - 1.6).gelu(),
            "clamp": lambda: (a * 2.0).clamp(0.5, 2.5),
            "nan_to_num": lambda: a.nan_to_num(0.0),
            "reshape": lambda: a.reshape(2, 6),
            "transpose": lambda: a.transpose(1, 0),
            "sum_axis": lambda: (a * b).sum(axis=0, keepdims=True),
            "mean_axis": lambda: (a * b).mean(axis=1),
            "log_softmax": lambda: a.log_softmax_last(),
            "broadcast_add": lambda: a + b.sum(axis=0, keepdims=True),
        }
        if opname == "relu":
            def f(as_tensor=True):
                loss = ((a - 1.6).relu() * Tensor(w)).sum()
                return loss if as_tensor else loss.item()
        else:
            def f(as_tensor=True):
                out = ops[opname]()
                flat = out.reshape(out.size) if out.ndim != 2 else out
                loss = (flat * flat).sum()
                return loss if as_tensor else loss.item()

        check_grads(f, [a, b])

    def test_take_rows_gradient(self):
        rng = Rng(21)
        table = Tensor(rng.normal((5, 3)), requires_grad=True)
        ids = np.array([[0, 2], [2, 4]])

        def f(as_tensor=True):
            out = take_rows(table, ids)
            loss = (out * out).sum()
            return loss if as_tensor else loss.item()

        check_grads(f, [table])

    def test_gather_last_gradient(self):
        rng = Rng(22)
        x = Tensor(rng.normal((4, 6)), requires_grad=True)
        idx = np.array([1, 0, 5, 3])

        def f(as_tensor=True):
            loss = (gather_last(x, idx) ** 2.0).sum()
            return loss if as_tensor else loss.item()

        check_grads(f, [x])


class TestRngDeterminism:
    def test_same_seed_same_stream(self):
        a = Rng(123).child("x").normal((4, 4))
        b = Rng(123).child("x").normal((4, 4))
        assert np.array_equal(a, b)

    def test_labels_give_distinct_streams(self):
        a = Rng(123).child("x").normal((4,))
        b = Rng(123).child("y").normal((4,))
        assert not np.array_equal(a, b)

    def test_dropout_seeded(self):
        x = Tensor(np.ones((8, 8)))
        a = dropout(x, 0.5, Rng(9).child("d"))
        b = dropout(x, 0.5, Rng(9).child("d"))
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, x.data)
