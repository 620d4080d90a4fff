import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridtwin import autodiff as ad
from gridtwin.errors import (
    MissingGradient,
    NonFiniteValue,
    NotScalarLoss,
    ShapeMismatch,
)


def weighted_mean(t, weights):
    return ad.mean_all(ad.mul(t, t.tape.constant(weights)))


class TestForward:
    def test_matmul_identity(self):
        tape = ad.Tape()
        a = np.random.default_rng(0).normal(size=(3, 5))
        out = ad.matmul(tape.constant(np.eye(3)), tape.constant(a))
        assert np.array_equal(out.value, a)

    def test_row_softmax_symmetry(self):
        tape = ad.Tape()
        out = ad.row_softmax(tape.constant(np.array([[0.0, 0.0]])))
        assert np.array_equal(out.value, np.array([[0.5, 0.5]]))

    def test_row_softmax_against_high_precision_oracle(self):
        import mpmath

        mpmath.mp.dps = 50
        xs = [1.0, 2.0, 3.0]
        es = [mpmath.exp(x) for x in xs]
        total = sum(es)
        expected = np.array([float(e / total) for e in es])
        tape = ad.Tape()
        out = ad.row_softmax(tape.constant(np.array([xs])))
        assert np.max(np.abs(out.value[0] - expected)) < 1e-12

    def test_shape_mismatch(self):
        tape = ad.Tape()
        a = tape.constant(np.zeros((2, 3)))
        b = tape.constant(np.zeros((4, 2)))
        with pytest.raises(ShapeMismatch):
            ad.matmul(a, b)
        with pytest.raises(ShapeMismatch):
            ad.add(a, b)

    def test_non_finite_trips(self):
        tape = ad.Tape()
        with pytest.raises(NonFiniteValue):
            tape.constant(np.array([1.0, np.inf]))

    def test_generic_dispatch(self):
        tape = ad.Tape()
        out = ad.forward("relu", tape.constant(np.array([-1.0, 2.0])))
        assert np.array_equal(out.value, [0.0, 2.0])

    def test_concat_then_complementary_slice_is_identity(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        tape = ad.Tape()
        joined = ad.concat_lastdim(tape.constant(a), tape.constant(b))
        left = ad.slice_lastdim(joined, 0, 3)
        right = ad.slice_lastdim(joined, 3, 5)
        assert np.array_equal(left.value, a)
        assert np.array_equal(right.value, b)

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_row_softmax_rows_sum_to_one(self, rows, cols, seed):
        x = np.random.default_rng(seed).normal(scale=5.0, size=(rows, cols))
        tape = ad.Tape()
        out = ad.row_softmax(tape.constant(x)).value
        assert np.all(out > 0) and np.all(out < 1 + 1e-12)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9

    def test_monotone_scalars(self):
        xs = np.linspace(-3, 3, 31)
        tape = ad.Tape()
        sig = ad.sigmoid(tape.constant(xs)).value
        rel = ad.relu(tape.constant(xs)).value
        assert np.all(np.diff(sig) > 0)
        assert np.all(np.diff(rel) >= 0)


class TestBackward:
    def test_mean_square_gradient(self):
        p = ad.Parameter("x", np.array([3.0]))
        tape = ad.Tape()
        loss = ad.mean_all(ad.square(tape.watch(p)))
        tape.backward(loss)
        assert np.array_equal(p.grad, np.array([6.0]))

    def test_second_backward_equals_first(self):
        p = ad.Parameter("x", np.array([[1.0, -2.0], [0.5, 4.0]]))
        tape = ad.Tape()
        loss = ad.mean_all(ad.square(ad.sigmoid(tape.watch(p))))
        tape.backward(loss)
        first = p.grad.copy()
        tape.backward(loss)
        assert np.array_equal(first, p.grad)

    def test_not_scalar_loss(self):
        p = ad.Parameter("x", np.ones((2, 2)))
        tape = ad.Tape()
        out = ad.square(tape.watch(p))
        with pytest.raises(NotScalarLoss):
            tape.backward(out)

    def test_parameter_reuse_accumulates(self):
        # y = x * x via two watches of the same parameter
        p = ad.Parameter("x", np.array([2.0]))
        tape = ad.Tape()
        t = tape.watch(p)
        loss = ad.mean_all(ad.mul(t, tape.watch(p)))
        tape.backward(loss)
        assert np.array_equal(p.grad, np.array([4.0]))  # d(x^2)/dx = 2x

    def test_matmul_chain_grad_check(self):
        rng = np.random.default_rng(2)
        b = rng.normal(size=(4, 3))
        c = rng.normal(size=(3, 2))

        def f(t):
            tape = t.tape
            return ad.mean_all(ad.matmul(ad.matmul(t, tape.constant(b)), tape.constant(c)))

        err = ad.grad_check(f, rng.normal(size=(5, 4)), step=1e-5)
        assert err < 1e-4

    def test_tape_determinism(self):
        def run():
            rng = np.random.default_rng(9)
            p = ad.Parameter("w", rng.normal(size=(3, 3)))
            tape = ad.Tape()
            x = tape.constant(rng.normal(size=(2, 3)))
            loss = ad.mean_all(ad.square(ad.row_softmax(ad.matmul(x, tape.watch(p)))))
            tape.backward(loss)
            return loss.value.copy(), p.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert np.array_equal(l1, l2)
        assert np.array_equal(g1, g2)


OP_CASES = {
    "matmul": lambda t: ad.mean_all(ad.matmul(t, t.tape.constant(_CONST["m"]))),
    "add": lambda t: ad.mean_all(ad.add(t, t.tape.constant(_CONST["e"]))),
    "sub": lambda t: ad.mean_all(ad.sub(t, t.tape.constant(_CONST["e"]))),
    "mul": lambda t: ad.mean_all(ad.mul(t, t.tape.constant(_CONST["e"]))),
    "scale": lambda t: ad.mean_all(ad.scale(t, 1.7)),
    "transpose": lambda t: ad.mean_all(ad.matmul(ad.transpose(t), t.tape.constant(_CONST["e"]))),
    "row_softmax": lambda t: ad.mean_all(ad.mul(ad.row_softmax(t), t.tape.constant(_CONST["e"]))),
    "sigmoid": lambda t: ad.mean_all(ad.sigmoid(t)),
    "relu": lambda t: ad.mean_all(ad.relu(t)),
    "square": lambda t: ad.mean_all(ad.square(t)),
    "concat_lastdim": lambda t: ad.mean_all(ad.concat_lastdim(t, ad.square(t))),
    "slice_lastdim": lambda t: ad.mean_all(ad.slice_lastdim(t, 1, 3)),
    "mean_all": lambda t: ad.mean_all(t),
}
_CONST = {}


class TestGradCheck:
    @pytest.mark.parametrize("op", sorted(OP_CASES))
    def test_every_op_20_random_shapes(self, op):
        for trial in range(20):
            rng = np.random.default_rng((101, trial))
            rows, cols = rng.integers(2, 6), rng.integers(3, 7)
            x = rng.normal(size=(rows, cols))
            # keep relu away from its kink so finite differences stay clean
            if op == "relu":
                x = np.where(np.abs(x) < 0.05, 0.2, x)
            _CONST["m"] = rng.normal(size=(cols, 3))
            _CONST["e"] = rng.normal(size=(rows, cols))
            err = ad.grad_check(OP_CASES[op], x, step=1e-5)
            assert err < 1e-4, f"{op} trial {trial}: {err}"

    def test_sigmoid_sum_tight(self):
        rng = np.random.default_rng(4)
        err = ad.grad_check(lambda t: ad.mean_all(ad.sigmoid(t)), rng.normal(size=(4, 4)))
        assert err < 1e-6

    def test_attention_path(self):
        rng = np.random.default_rng(5)
        wk = rng.normal(size=(4, 4))

        def f(t):
            tape = t.tape
            scores = ad.scale(ad.matmul(t, ad.transpose(ad.matmul(t, tape.constant(wk)))),
                              1.0 / math.sqrt(4))
            attn = ad.row_softmax(scores)
            return ad.mean_all(ad.matmul(attn, t))

        assert ad.grad_check(f, rng.normal(size=(3, 4))) < 1e-4

    def test_linear_map_near_exact(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(5, 2))
        err = ad.grad_check(
            lambda t: ad.mean_all(ad.matmul(t, t.tape.constant(w))),
            rng.normal(size=(3, 5)),
        )
        assert err < 1e-10


class TestSgd:
    def test_arithmetic(self):
        p = ad.Parameter("p", np.array(1.0))
        p.grad = np.array(2.0)
        ad.sgd_step([p], lr=0.5)
        assert p.value == 0.0
        assert p.grad is None

    def test_lr_zero_identity(self):
        p = ad.Parameter("p", np.array([1.0, 2.0]))
        p.grad = np.array([3.0, 4.0])
        ad.sgd_step([p], lr=0.0)
        assert np.array_equal(p.value, [1.0, 2.0])

    def test_missing_gradient(self):
        p = ad.Parameter("p", np.array(1.0))
        with pytest.raises(MissingGradient):
            ad.sgd_step([p], lr=0.1)

    def test_quadratic_geometric_decay(self):
        p = ad.Parameter("x", np.array(1.0))
        for _ in range(100):
            tape = ad.Tape()
            loss = ad.mean_all(ad.square(tape.watch(p)))
            tape.backward(loss)
            ad.sgd_step([p], lr=0.1)
        # contraction factor 0.8 per step: 0.8**100 ~ 2e-10
        assert abs(float(p.value)) < 1e-9
        assert float(p.value) == pytest.approx(0.8**100, rel=1e-9)


class TestCheckpoint:
    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(7)
        params = [
            ad.uniform_init("layer.w", (7, 3), 7, rng),
            ad.zeros_init("layer.b", (3,)),
            ad.Parameter("odd", np.array([1e-308, -1.5, math.pi])),
        ]
        path = tmp_path / "params.json"
        ad.save_params(path, params, extra={"kind": "test"})
        arrays, extra = ad.load_params(path)
        assert extra == {"kind": "test"}
        for p in params:
            assert np.array_equal(arrays[p.name], p.value)
            assert arrays[p.name].dtype == np.float64

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "something-else", "params": []}')
        with pytest.raises(ValueError):
            ad.load_params(path)
