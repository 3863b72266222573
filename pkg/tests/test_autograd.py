import numpy as np
import pytest

from unrollsep import autograd as ag
from unrollsep.autograd import Tape, backward
from unrollsep.errors import CrossTapeError, DimensionError, TapeLimitError
from unrollsep.oracle import FiniteDiffSpec, fd_gradient


class TestOpValues:
    def test_matmul_hand_values(self):
        tape = Tape()
        a = tape.leaf([[1.0, 2.0], [3.0, 4.0]])
        b = tape.leaf([[5.0, 6.0], [7.0, 8.0]])
        c = ag.matmul(a, b)
        np.testing.assert_array_equal(c.value, [[19.0, 22.0], [43.0, 50.0]])

    def test_trace_identity(self):
        tape = Tape()
        assert float(ag.trace(tape.leaf(np.eye(3))).value) == 3.0

    def test_sqnorm_zero_vector(self):
        tape = Tape()
        v = tape.leaf(np.zeros(4))
        root = ag.sqnorm(v)
        assert float(root.value) == 0.0
        assert np.array_equal(backward(tape, root).get(v), np.zeros(4))

    def test_relu_at_zero_has_zero_gradient(self):
        tape = Tape()
        v = tape.leaf(np.array([-1.0, 0.0, 2.0]))
        root = ag.sqnorm(ag.relu(v))
        g = backward(tape, root).get(v)
        np.testing.assert_array_equal(g, [0.0, 0.0, 4.0])

    def test_scale_adjoint_is_constant(self):
        tape = Tape()
        x = tape.leaf(3.0)
        root = ag.scale(x, 2.5)
        assert float(backward(tape, root).get(x)) == 2.5

    def test_norm_gradient_matches_analytic(self):
        rng = np.random.default_rng(3)
        W0 = rng.standard_normal((3, 2))
        y = rng.standard_normal(2)
        tape = Tape()
        W = tape.leaf(W0)
        root = ag.sqnorm(ag.matmul(W, tape.constant(y)))
        got = backward(tape, root).get(W)
        np.testing.assert_allclose(got, 2.0 * np.outer(W0 @ y, y), rtol=1e-12)


class TestOpGradients:
    """Finite-difference check of every registered op individually."""

    def test_add_sub(self):
        def build2(flat):
            tape = Tape()
            a = tape.leaf(flat[:3])
            b = tape.leaf(flat[3:])
            root = ag.sqnorm(ag.sub(ag.add(a, b), ag.scale(b, 0.5)))
            return tape, (a, b), root

        point = np.random.default_rng(0).uniform(-1, 1, 6)
        tape, (a, b), root = build2(point)
        grads = backward(tape, root)
        got = np.concatenate([grads.get(a), grads.get(b)])
        want = fd_gradient(lambda p: float(build2(p)[2].value), point, FiniteDiffSpec(1e-6))
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize("op", [ag.tanh, ag.relu, ag.cube])
    def test_elementwise(self, op):
        def run(flat):
            tape = Tape()
            v = tape.leaf(flat)
            return tape, v, ag.sqnorm(op(v))

        point = np.array([0.3, -0.7, 1.2, -0.1])
        tape, v, root = run(point)
        got = backward(tape, root).get(v)
        want = fd_gradient(lambda p: float(run(p)[2].value), point, FiniteDiffSpec(1e-6))
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-9)

    def test_matmul_all_arities(self):
        def run(flat):
            tape = Tape()
            A = tape.leaf(flat[:6].reshape(2, 3))
            B = tape.leaf(flat[6:12].reshape(3, 2))
            v = tape.leaf(flat[12:15])
            mm = ag.matmul(A, B)                      # matrix @ matrix
            mv = ag.matmul(A, v)                      # matrix @ vector
            vv = ag.matmul(v, ag.matmul(ag.transpose(A), mv))  # vector @ vector
            return tape, (A, B, v), ag.add(ag.sqnorm(mm), ag.add(ag.sqnorm(mv), vv))

        point = np.random.default_rng(1).uniform(-1, 1, 15)
        tape, leaves, root = run(point)
        grads = backward(tape, root)
        got = np.concatenate([grads.get(x).ravel() for x in leaves])
        want = fd_gradient(lambda p: float(run(p)[2].value), point, FiniteDiffSpec(1e-6))
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)

    def test_scalar_ops_and_outer_and_trace(self):
        def run(flat):
            tape = Tape()
            u = tape.leaf(flat[:3])
            v = tape.leaf(flat[3:6])
            s = tape.leaf(flat[6])
            O = ag.outer(u, v)                        # noqa: E741
            scaled = ag.mul_scalar(s, O)
            divided = ag.div_scalar(scaled, ag.add(s, tape.constant(2.0)))
            return tape, (u, v, s), ag.add(ag.trace(ag.matmul(divided, tape.constant(np.eye(3)))),
                                           ag.sqnorm(divided))

        point = np.random.default_rng(2).uniform(0.5, 1.5, 7)
        tape, leaves, root = run(point)
        grads = backward(tape, root)
        got = np.concatenate([np.atleast_1d(grads.get(x)).ravel() for x in leaves])
        want = fd_gradient(lambda p: float(run(p)[2].value), point, FiniteDiffSpec(1e-6))
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)


class TestEngine:
    def test_linearity_of_backward(self):
        rng = np.random.default_rng(5)
        x0 = rng.standard_normal(4)
        tape = Tape()
        x = tape.leaf(x0)
        f = ag.sqnorm(ag.tanh(x))
        g = ag.sqnorm(ag.cube(x))
        combo = ag.add(ag.scale(f, 2.0), ag.scale(g, -3.0))
        gf = backward(tape, f).get(x)
        gg = backward(tape, g).get(x)
        gc = backward(tape, combo).get(x)
        np.testing.assert_allclose(gc, 2.0 * gf - 3.0 * gg, atol=1e-12)

    def test_backward_is_deterministic(self):
        rng = np.random.default_rng(6)
        tape = Tape()
        W = tape.leaf(rng.standard_normal((3, 3)))
        v = tape.leaf(rng.standard_normal(3))
        root = ag.sqnorm(ag.matmul(W, ag.tanh(ag.matmul(W, v))))
        g1 = backward(tape, root).get(W)
        g2 = backward(tape, root).get(W)
        assert np.array_equal(g1, g2)

    def test_fanout_accumulates(self):
        tape = Tape()
        x = tape.leaf(2.0)
        root = ag.add(x, x)  # d(2x)/dx = 2
        assert float(backward(tape, root).get(x)) == 2.0

    def test_leaf_copies_input(self):
        buf = np.ones(3)
        tape = Tape()
        v = tape.leaf(buf)
        buf[0] = 99.0
        assert v.value[0] == 1.0

    def test_tape_limit(self):
        tape = Tape(limit=3)
        a = tape.leaf(1.0)
        b = tape.leaf(2.0)
        ag.add(a, b)
        with pytest.raises(TapeLimitError):
            ag.add(a, b)

    def test_cross_tape_rejected(self):
        t1, t2 = Tape(), Tape()
        with pytest.raises(CrossTapeError):
            ag.add(t1.leaf(1.0), t2.leaf(1.0))

    def test_non_scalar_root_rejected(self):
        tape = Tape()
        v = tape.leaf(np.ones(2))
        with pytest.raises(DimensionError):
            backward(tape, v)

    def test_shape_mismatches_rejected(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            ag.add(tape.leaf(np.ones(2)), tape.leaf(np.ones(3)))
        with pytest.raises(DimensionError):
            ag.matmul(tape.leaf(np.ones((2, 2))), tape.leaf(np.ones(3)))
        with pytest.raises(DimensionError):
            ag.trace(tape.leaf(np.ones((2, 3))))
        with pytest.raises(DimensionError):
            ag.outer(tape.leaf(np.ones((2, 2))), tape.leaf(np.ones(2)))
