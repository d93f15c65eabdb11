"""Forward values and finite-difference gradient checks for every primitive."""

import numpy as np
import pytest

from ranet import autodiff as ad
from ranet.autodiff import GraphError, NumericError, ShapeError, Tape

from oracles import check_gradient

RNG = np.random.default_rng(20240811)
N_TRIALS = 20
PRIMITIVE_TOL = 1e-6


def scalar_through(op, x_arr: np.ndarray, *, weights=None):
    """Wrap op into a scalar function sum(weights * op(x)) of the raw array."""

    def f(arr):
        tape = Tape(np.float64)
        x = tape.tensor(arr, requires_grad=True)
        out = op(tape, x)
        w = tape.constant(weights if weights is not None else np.ones(out.shape))
        return float(ad.sum_all(ad.mul(out, w)).data)

    return f


def grad_of(op, x_arr: np.ndarray, *, weights=None):
    tape = Tape(np.float64)
    x = tape.tensor(x_arr, requires_grad=True)
    out = op(tape, x)
    w = tape.constant(weights if weights is not None else np.ones(out.shape))
    ad.backward(ad.sum_all(ad.mul(out, w)))
    return x.grad


def assert_op_gradient(op, shape, trials=N_TRIALS, tol=PRIMITIVE_TOL, min_mag=0.0,
                       sampler=None):
    """Run repeated randomized finite-difference checks on a unary-style op."""
    for _ in range(trials):
        x_arr = sampler(RNG) if sampler else RNG.uniform(-1.0, 1.0, size=shape)
        # random cotangent keeps the check sensitive beyond sum-of-outputs
        tape = Tape(np.float64)
        probe_out = op(tape, tape.tensor(x_arr))
        weights = RNG.uniform(-1.0, 1.0, size=probe_out.shape)
        g = grad_of(op, x_arr, weights=weights)
        f = scalar_through(op, x_arr, weights=weights)
        worst = check_gradient(f, x_arr, g, n_probes=4, rng=RNG, min_mag=min_mag)
        assert worst < tol, f"worst rel err {worst:.3e}"


class TestMatmul:
    def test_identity(self):
        tape = Tape()
        a = tape.tensor([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(a, tape.tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_hand_product(self):
        tape = Tape()
        out = ad.matmul(tape.tensor([[1.0, 2.0], [3.0, 4.0]]), tape.tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_shape_error_lists_both(self):
        tape = Tape()
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(tape.tensor(np.zeros((2, 3))), tape.tensor(np.zeros((2, 2))))

    def test_gradient_both_operands(self):
        for _ in range(N_TRIALS):
            a_arr = RNG.normal(size=(3, 4))
            b_arr = RNG.normal(size=(4, 2))
            w_arr = RNG.normal(size=(3, 2))

            def run(a_in, b_in):
                tape = Tape(np.float64)
                a = tape.tensor(a_in, requires_grad=True)
                b = tape.tensor(b_in, requires_grad=True)
                loss = ad.sum_all(ad.mul(ad.matmul(a, b), tape.constant(w_arr)))
                return tape, a, b, loss

            tape, a, b, loss = run(a_arr, b_arr)
            ad.backward(loss)
            fa = lambda arr: float(run(arr, b_arr)[3].data)
            fb = lambda arr: float(run(a_arr, arr)[3].data)
            assert check_gradient(fa, a_arr, a.grad, 4, RNG) < PRIMITIVE_TOL
            assert check_gradient(fb, b_arr, b.grad, 4, RNG) < PRIMITIVE_TOL


class TestSoftmaxRows:
    def test_constant_row_uniform(self):
        tape = Tape()
        out = ad.softmax_rows(tape.tensor(np.full((2, 3), 4.2)))
        np.testing.assert_allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_large_values_no_overflow(self):
        tape = Tape()
        out = ad.softmax_rows(tape.tensor([[1000.0, 1000.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_closed_form_exponentials(self):
        tape = Tape()
        out = ad.softmax_rows(tape.tensor([[np.log(1.0), np.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-12)

    def test_rows_sum_to_one(self):
        for _ in range(50):
            tape = Tape()
            out = ad.softmax_rows(tape.tensor(RNG.normal(0, 5, size=(6, 7))))
            np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)

    def test_nan_rejected(self):
        tape = Tape()
        with pytest.raises(NumericError):
            ad.softmax_rows(tape.tensor([[np.nan, 0.0]]))

    def test_gradient(self):
        assert_op_gradient(lambda t, x: ad.softmax_rows(x), (4, 5))


class TestConv2d:
    def test_one_by_one_identity_kernel(self):
        tape = Tape()
        x = tape.tensor(RNG.uniform(size=(1, 5, 5)))
        k = tape.tensor(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(ad.conv2d(x, k).data, x.data)

    def test_all_ones_kernel_interior(self):
        tape = Tape()
        x = tape.tensor(np.full((1, 6, 6), 0.7))
        out = ad.conv2d(x, tape.tensor(np.ones((1, 1, 3, 3))))
        np.testing.assert_allclose(out.data[0, 1:-1, 1:-1], 9 * 0.7, atol=1e-12)

    def test_even_kernel_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError, match="odd"):
            ad.conv2d(tape.tensor(np.zeros((1, 4, 4))), tape.tensor(np.zeros((1, 1, 2, 2))))

    def test_dilation_matches_explicit_sum(self):
        # dilation-2 3x3 kernel reads a 5x5 footprint with holes
        x_arr = RNG.uniform(size=(1, 7, 7))
        k_arr = RNG.normal(size=(1, 1, 3, 3))
        tape = Tape()
        out = ad.conv2d(tape.tensor(x_arr), tape.tensor(k_arr), dilation=2).data
        xp = np.pad(x_arr[0], 2)
        expect = sum(
            k_arr[0, 0, i, j] * xp[2 * i : 2 * i + 7, 2 * j : 2 * j + 7]
            for i in range(3)
            for j in range(3)
        )
        np.testing.assert_allclose(out[0], expect, atol=1e-12)

    @pytest.mark.parametrize("dilation", [1, 2])
    def test_gradient_input_kernel_bias(self, dilation):
        for _ in range(N_TRIALS // 2):
            x_arr = RNG.normal(size=(2, 5, 5))
            k_arr = RNG.normal(size=(3, 2, 3, 3)) * 0.5
            b_arr = RNG.normal(size=(3,))
            w_arr = RNG.normal(size=(3, 5, 5))

            def run(xv, kv, bv):
                tape = Tape(np.float64)
                x = tape.tensor(xv, requires_grad=True)
                k = tape.tensor(kv, requires_grad=True)
                b = tape.tensor(bv, requires_grad=True)
                out = ad.conv2d(x, k, bias=b, dilation=dilation)
                loss = ad.sum_all(ad.mul(out, tape.constant(w_arr)))
                return x, k, b, loss

            x, k, b, loss = run(x_arr, k_arr, b_arr)
            ad.backward(loss)
            fx = lambda v: float(run(v, k_arr, b_arr)[3].data)
            fk = lambda v: float(run(x_arr, v, b_arr)[3].data)
            fb = lambda v: float(run(x_arr, k_arr, v)[3].data)
            assert check_gradient(fx, x_arr, x.grad, 4, RNG) < PRIMITIVE_TOL
            assert check_gradient(fk, k_arr, k.grad, 4, RNG) < PRIMITIVE_TOL
            assert check_gradient(fb, b_arr, b.grad, 2, RNG) < PRIMITIVE_TOL


class TestPooling:
    def test_window_mean(self):
        tape = Tape()
        out = ad.avgpool(tape.tensor([[[1.0, 3.0], [5.0, 7.0]]]), 2)
        np.testing.assert_array_equal(out.data, [[[4.0]]])

    def test_constant_stays_constant(self):
        tape = Tape()
        out = ad.avgpool(tape.tensor(np.full((3, 8, 8), 0.3)), 2)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-15)

    def test_window_too_large(self):
        tape = Tape()
        with pytest.raises(ValueError):
            ad.avgpool(tape.tensor(np.zeros((1, 2, 2))), 3)

    def test_adaptive_identity_at_full_grid(self):
        tape = Tape()
        x = tape.tensor(RNG.uniform(size=(2, 5, 5)))
        np.testing.assert_array_equal(ad.adaptive_avgpool(x, 5).data, x.data)

    def test_adaptive_grid_one_is_global_mean(self):
        tape = Tape()
        x_arr = RNG.uniform(size=(2, 6, 4))
        out = ad.adaptive_avgpool(tape.tensor(x_arr), 1)
        np.testing.assert_allclose(out.data[:, 0, 0], x_arr.mean(axis=(1, 2)), atol=1e-12)

    def test_avgpool_gradient(self):
        assert_op_gradient(lambda t, x: ad.avgpool(x, 2), (2, 6, 6))

    def test_adaptive_gradient_nondivisible(self):
        assert_op_gradient(lambda t, x: ad.adaptive_avgpool(x, 3), (2, 7, 5))


class TestUpsample:
    def test_constant_map(self):
        tape = Tape()
        out = ad.upsample_bilinear(tape.tensor(np.full((1, 3, 3), 0.6)), 7, 11)
        np.testing.assert_allclose(out.data, 0.6, atol=1e-12)

    def test_identity_when_same_shape(self):
        tape = Tape()
        x = tape.tensor(RNG.uniform(size=(2, 4, 6)))
        np.testing.assert_allclose(ad.upsample_bilinear(x, 4, 6).data, x.data, atol=1e-12)

    def test_corners_map_to_corners(self):
        tape = Tape()
        x_arr = RNG.uniform(size=(1, 3, 3))
        out = ad.upsample_bilinear(tape.tensor(x_arr), 9, 9).data
        for (r_out, c_out), (r_in, c_in) in [
            ((0, 0), (0, 0)), ((0, 8), (0, 2)), ((8, 0), (2, 0)), ((8, 8), (2, 2)),
        ]:
            assert out[0, r_out, c_out] == pytest.approx(x_arr[0, r_in, c_in], abs=1e-12)

    def test_zero_target_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError):
            ad.upsample_bilinear(tape.tensor(np.zeros((1, 2, 2))), 0, 4)

    def test_gradient(self):
        assert_op_gradient(lambda t, x: ad.upsample_bilinear(x, 9, 7), (2, 4, 4))
        assert_op_gradient(lambda t, x: ad.upsample_bilinear(x, 3, 3), (1, 5, 5))


class TestConcatSlice:
    def test_unary_concat(self):
        tape = Tape()
        x = tape.tensor(RNG.uniform(size=(2, 3, 3)))
        np.testing.assert_array_equal(ad.concat_channels([x]).data, x.data)

    def test_channel_counts_add(self):
        tape = Tape()
        out = ad.concat_channels(
            [tape.tensor(np.zeros((2, 4, 4))), tape.tensor(np.zeros((3, 4, 4)))]
        )
        assert out.shape == (5, 4, 4)

    def test_slice_back_returns_originals(self):
        tape = Tape()
        a = tape.tensor(RNG.uniform(size=(2, 3, 3)))
        b = tape.tensor(RNG.uniform(size=(3, 3, 3)))
        cat = ad.concat_channels([a, b])
        np.testing.assert_array_equal(ad.slice_channels(cat, 0, 2).data, a.data)
        np.testing.assert_array_equal(ad.slice_channels(cat, 2, 5).data, b.data)

    def test_spatial_mismatch(self):
        tape = Tape()
        with pytest.raises(ShapeError):
            ad.concat_channels(
                [tape.tensor(np.zeros((1, 4, 4))), tape.tensor(np.zeros((1, 5, 4)))]
            )

    def test_gradients_split(self):
        tape = Tape(np.float64)
        a = tape.tensor(RNG.uniform(size=(2, 3, 3)), requires_grad=True)
        b = tape.tensor(RNG.uniform(size=(1, 3, 3)), requires_grad=True)
        w = tape.constant(RNG.normal(size=(3, 3, 3)))
        ad.backward(ad.sum_all(ad.mul(ad.concat_channels([a, b]), w)))
        np.testing.assert_array_equal(a.grad, w.data[0:2])
        np.testing.assert_array_equal(b.grad, w.data[2:3])


class TestElementwise:
    def test_relu_values(self):
        tape = Tape()
        out = ad.relu(tape.tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        tape = Tape()
        assert ad.sigmoid(tape.tensor([0.0])).data[0] == 0.5

    def test_sigmoid_extreme_inputs_stable(self):
        tape = Tape()
        out = ad.sigmoid(tape.tensor([-800.0, 800.0])).data
        assert out[0] == 0.0 and out[1] == 1.0

    def test_softplus_matches_reference(self):
        tape = Tape()
        xs = np.array([-700.0, -3.0, 0.0, 3.0, 700.0])
        out = ad.softplus(tape.tensor(xs)).data
        np.testing.assert_allclose(out, np.logaddexp(0, xs), rtol=1e-15)
        assert out[-1] == 700.0  # no overflow

    def test_nan_rejected(self):
        tape = Tape()
        bad = tape.tensor([np.nan])
        for op in (ad.relu, ad.sigmoid, ad.softplus, ad.abs_val):
            with pytest.raises(NumericError):
                op(bad)
        with pytest.raises(NumericError):
            ad.add(bad, bad)

    def test_relu_gradient_at_zero_is_zero(self):
        tape = Tape(np.float64)
        x = tape.tensor([0.0], requires_grad=True)
        ad.backward(ad.sum_all(ad.relu(x)))
        assert x.grad[0] == 0.0

    def test_mul_gradient(self):
        for _ in range(N_TRIALS):
            a_arr = RNG.normal(size=(3, 3))
            b_arr = RNG.normal(size=(3, 3))

            def run(av, bv):
                tape = Tape(np.float64)
                a = tape.tensor(av, requires_grad=True)
                b = tape.tensor(bv, requires_grad=True)
                return a, b, ad.sum_all(ad.mul(a, b))

            a, b, loss = run(a_arr, b_arr)
            ad.backward(loss)
            fa = lambda v: float(run(v, b_arr)[2].data)
            assert check_gradient(fa, a_arr, a.grad, 4, RNG) < PRIMITIVE_TOL

    def test_scale_add_sigmoid_softplus_abs_gradients(self):
        assert_op_gradient(lambda t, x: ad.scale(x, -2.5), (4,))
        assert_op_gradient(lambda t, x: ad.sigmoid(x), (3, 3))
        assert_op_gradient(lambda t, x: ad.softplus(x), (3, 3))
        assert_op_gradient(
            lambda t, x: ad.abs_val(x), (4, 4), min_mag=0.5,
            sampler=lambda rng: np.where(
                rng.uniform(size=(4, 4)) < 0.5, -1.0, 1.0
            ) * rng.uniform(0.1, 1.0, size=(4, 4)),
        )
        assert_op_gradient(
            lambda t, x: ad.relu(x), (4, 4), min_mag=0.5,
            sampler=lambda rng: rng.uniform(0.05, 1.0, size=(4, 4)),
        )

    def test_normalize_columns_unit_norms(self):
        tape = Tape()
        out = ad.normalize_columns(tape.tensor(RNG.normal(size=(5, 4))))
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=0), 1.0, atol=1e-9)

    def test_normalize_columns_gradient(self):
        assert_op_gradient(lambda t, x: ad.normalize_columns(x), (5, 4))

    def test_reshape_transpose_gradients(self):
        assert_op_gradient(lambda t, x: ad.reshape(x, (6, 2)), (3, 4))
        assert_op_gradient(lambda t, x: ad.transpose(x), (3, 4))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        tape = Tape(np.float64)
        x = tape.tensor(RNG.uniform(size=(3, 4)), requires_grad=True)
        ad.backward(ad.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic_gradient(self):
        tape = Tape(np.float64)
        x_arr = RNG.normal(size=(5,))
        x = tape.tensor(x_arr, requires_grad=True)
        ad.backward(ad.sum_all(ad.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2 * x_arr, atol=1e-12)

    def test_double_backward_rejected(self):
        tape = Tape(np.float64)
        x = tape.tensor([1.0], requires_grad=True)
        loss = ad.sum_all(x)
        ad.backward(loss)
        with pytest.raises(GraphError):
            ad.backward(loss)

    def test_non_scalar_loss_rejected(self):
        tape = Tape(np.float64)
        x = tape.tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            ad.backward(ad.mul(x, x))

    def test_detached_loss_rejected(self):
        tape = Tape(np.float64)
        with pytest.raises(GraphError):
            ad.backward(ad.sum_all(tape.tensor([1.0])))

    def test_cross_tape_rejected(self):
        t1, t2 = Tape(), Tape()
        with pytest.raises(GraphError):
            ad.add(t1.tensor([1.0]), t2.tensor([1.0]))

    def test_composed_graph_matches_finite_differences(self):
        for _ in range(N_TRIALS):
            x_arr = RNG.normal(size=(2, 6, 6)) * 0.5
            k_arr = RNG.normal(size=(2, 2, 3, 3)) * 0.4

            def full(xv):
                tape = Tape(np.float64)
                x = tape.tensor(xv, requires_grad=True)
                k = tape.tensor(k_arr)
                h = ad.relu(ad.conv2d(x, k))
                h = ad.avgpool(h, 2)
                h = ad.upsample_bilinear(h, 6, 6)
                h = ad.sigmoid(ad.concat_channels([h, x]))
                return x, ad.sum_all(ad.mul(h, h))

            x, loss = full(x_arr)
            ad.backward(loss)
            f = lambda v: float(full(v)[1].data)
            # relu kinks: probe only clearly-active coordinates
            worst = check_gradient(f, x_arr, x.grad, 6, RNG, min_mag=1e-3)
            assert worst < 1e-5

    def test_grad_accumulates_over_reuse(self):
        tape = Tape(np.float64)
        x = tape.tensor([3.0], requires_grad=True)
        y = ad.add(ad.mul(x, x), x)  # x^2 + x
        ad.backward(ad.sum_all(y))
        np.testing.assert_allclose(x.grad, [7.0])

    def test_determinism(self):
        def run():
            tape = Tape(np.float64)
            x = tape.tensor(np.linspace(-1, 1, 24).reshape(2, 3, 4), requires_grad=True)
            h = ad.softplus(ad.scale(x, 1.7))
            loss = ad.sum_all(ad.mul(h, h))
            ad.backward(loss)
            return loss.data.tobytes(), x.grad.tobytes()

        assert run() == run()


class TestPrecisionModes:
    def test_float32_tape(self):
        tape = Tape(np.float32)
        x = tape.tensor([1.0, 2.0], requires_grad=True)
        out = ad.sum_all(ad.mul(x, x))
        assert out.data.dtype == np.float32
        ad.backward(out)
        assert x.grad.dtype == np.float32

    def test_bad_dtype_rejected(self):
        with pytest.raises(ValueError):
            Tape(np.int32)
