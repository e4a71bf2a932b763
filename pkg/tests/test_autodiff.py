import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from utils.autodiff import (
    Adam,
    NoamSchedule,
    Tensor,
    backward,
    batch_norm,
    conv,
    dropout,
    einsum,
    glu,
    gradcheck,
    layer_norm,
    log_softmax,
    matmul,
    max_pool,
    no_grad,
    softmax,
    take,
    take_along_last,
)
from utils.autodiff.optim import AdamState, adam_step
from utils.errors import ContractError, NumericError, ShapeError


def param(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestTensorOps:
    def test_matmul_identity(self) -> None:
        out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[2.0, 3.0], [4.0, 5.0]]))
        np.testing.assert_array_equal(out.data, [[2.0, 3.0], [4.0, 5.0]])

    def test_matmul_hand_arithmetic(self) -> None:
        assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_matmul_inner_extent_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_matmul_gradient(self, rng: np.random.Generator) -> None:
        a, b = param(rng, 4, 5), param(rng, 5, 3)
        assert gradcheck(lambda: matmul(a, b).sum(), [a, b]) < 1e-6

    def test_sum_gradient_is_ones(self, rng: np.random.Generator) -> None:
        x = param(rng, 2, 3, 4)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_square_gradient(self) -> None:
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_backward_accumulates(self) -> None:
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(x.sum())
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_backward_needs_scalar(self) -> None:
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0)

    def test_no_grad_records_nothing(self) -> None:
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert not y.requires_grad
        assert backward(y) == {}

    def test_broadcast_gradient_is_summed(self, rng: np.random.Generator) -> None:
        x, bias = param(rng, 3, 4), param(rng, 4)
        assert gradcheck(lambda: ((x + bias) * (x + bias)).sum(), [x, bias]) < 1e-6

    @pytest.mark.parametrize("op", ["exp", "log", "abs", "pow", "div", "getitem", "transpose", "reshape"])
    def test_elementwise_and_plumbing_gradients(self, rng: np.random.Generator, op: str) -> None:
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
        fns = {
            "exp": lambda: x.exp().sum(),
            "log": lambda: x.log().sum(),
            "abs": lambda: (x - 1.25).abs().sum(),
            "pow": lambda: (x**3).sum(),
            "div": lambda: (1.0 / x).sum(),
            "getitem": lambda: (x[1:, ::2] * x[1:, ::2]).sum(),
            "transpose": lambda: (x.transpose(1, 0) @ x).sum(),
            "reshape": lambda: (x.reshape(2, 6) ** 2).sum(),
        }
        assert gradcheck(fns[op], [x]) < 1e-6


class TestFunctional:
    def test_softmax_symmetric(self) -> None:
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_glu_with_zero_gate_halves(self) -> None:
        a = np.array([[2.0, -4.0]])
        out = glu(Tensor(np.concatenate([a, np.zeros_like(a)], axis=-1)), axis=-1)
        np.testing.assert_allclose(out.data, a / 2)

    def test_glu_odd_split_axis(self) -> None:
        with pytest.raises(ShapeError):
            glu(Tensor(np.ones((2, 3))), axis=-1)

    def test_log_softmax_rows_normalised(self, rng: np.random.Generator) -> None:
        out = log_softmax(Tensor(rng.normal(size=(5, 7)) * 30))
        np.testing.assert_allclose(np.exp(out.data).sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm_gradient(self, rng: np.random.Generator) -> None:
        x, gain, bias = param(rng, 3, 7), param(rng, 7), param(rng, 7)
        weights = rng.normal(size=(3, 7))
        assert gradcheck(lambda: (layer_norm(x, gain, bias) * weights).sum(), [x, gain, bias]) < 1e-6

    def test_batch_norm_train_gradient_and_eval_constants(self, rng: np.random.Generator) -> None:
        x, gain, bias = param(rng, 4, 3, 5), param(rng, 3), param(rng, 3)
        weights = rng.normal(size=(4, 3, 5))

        def fn() -> Tensor:
            return (batch_norm(x, gain, bias, np.zeros(3), np.ones(3), training=True) * weights).sum()

        assert gradcheck(fn, [x, gain, bias]) < 1e-5
        running_mean, running_var = np.full(3, 2.0), np.full(3, 4.0)
        out = batch_norm(Tensor(np.full((1, 3, 2), 2.0)), Tensor(np.ones(3)), Tensor(np.zeros(3)), running_mean, running_var, training=False)
        np.testing.assert_allclose(out.data, 0.0)

    def test_batch_norm_mask_excludes_padding(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(1, 2, 6))
        mask = np.array([[[True, True, True, False, False, False]]])
        padded = x.copy()
        padded[..., 3:] = 1e6
        outs = [
            batch_norm(Tensor(v), Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True, mask=mask).data
            for v in (x, padded)
        ]
        np.testing.assert_allclose(outs[0][..., :3], outs[1][..., :3], atol=1e-12)

    def test_dropout_is_seeded(self, rng: np.random.Generator) -> None:
        x = Tensor(np.ones((4, 4)))
        first = dropout(x, 0.5, np.random.default_rng(3), training=True).data
        second = dropout(x, 0.5, np.random.default_rng(3), training=True).data
        np.testing.assert_array_equal(first, second)
        assert dropout(x, 0.5, rng, training=False) is x

    def test_einsum_gradient(self, rng: np.random.Generator) -> None:
        a, b = param(rng, 2, 3, 4), param(rng, 2, 4, 5)
        assert gradcheck(lambda: einsum("bij,bjk->bik", a, b).sum(), [a, b]) < 1e-6

    def test_take_and_take_along_last_gradients(self, rng: np.random.Generator) -> None:
        table = param(rng, 5, 3)
        assert gradcheck(lambda: (take(table, np.array([0, 2, 2, 4])) ** 2).sum(), [table]) < 1e-6
        x = param(rng, 3, 4)
        assert gradcheck(lambda: (take_along_last(x, np.array([0, 3, 1])) ** 2).sum(), [x]) < 1e-6


class TestConvolution:
    def test_identity_kernel(self) -> None:
        out = conv(Tensor([[[1.0, 2.0, 3.0]]]), Tensor([[[1.0]]]))
        np.testing.assert_array_equal(out.data, [[[1.0, 2.0, 3.0]]])

    def test_strided_sum_kernel(self) -> None:
        out = conv(Tensor([[[1.0, 2.0, 3.0, 4.0]]]), Tensor([[[1.0, 1.0]]]), stride=2)
        np.testing.assert_array_equal(out.data, [[[3.0, 7.0]]])

    def test_3d_stem_shape(self) -> None:
        x = Tensor(np.zeros((1, 1, 3, 20, 20)))
        k = Tensor(np.zeros((4, 1, 5, 7, 7)))
        assert conv(x, k, stride=(1, 2, 2), padding=(2, 3, 3), dims=3).shape == (1, 4, 3, 10, 10)

    def test_rank_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            conv(Tensor(np.zeros((1, 1, 4))), Tensor(np.zeros((1, 1, 2, 2))), dims=1)

    def test_depthwise_gradient(self, rng: np.random.Generator) -> None:
        x, k = param(rng, 2, 3, 6), param(rng, 3, 1, 3)
        assert gradcheck(lambda: (conv(x, k, padding=1, groups=3) ** 2).sum(), [x, k]) < 1e-6

    @pytest.mark.parametrize("groups", [1, 2])
    def test_matches_scipy_correlation(self, rng: np.random.Generator, groups: int) -> None:
        x = rng.normal(size=(2, 4, 7, 6))
        k = rng.normal(size=(6, 4 // groups, 3, 2))
        expected = np.zeros((2, 6, 5, 5))
        per_group = 6 // groups
        for b, o in np.ndindex(2, 6):
            g = o // per_group
            channels = x[b, g * (4 // groups) : (g + 1) * (4 // groups)]
            expected[b, o] = signal.correlate(channels, k[o], mode="valid")[0]
        np.testing.assert_allclose(conv(Tensor(x), Tensor(k), dims=2, groups=groups).data, expected, atol=1e-12)

    def test_strided_padded_gradient(self, rng: np.random.Generator) -> None:
        x, k = param(rng, 1, 2, 5, 5), param(rng, 3, 2, 3, 3)
        assert gradcheck(lambda: (conv(x, k, stride=2, padding=1, dims=2) ** 2).sum(), [x, k]) < 1e-6

    def test_composite_conv_layernorm_softmax(self, rng: np.random.Generator) -> None:
        x, k = param(rng, 1, 2, 6), param(rng, 4, 2, 3)
        gain, bias = param(rng, 4), param(rng, 4)
        weights = rng.normal(size=(1, 4, 4))

        def fn() -> Tensor:
            h = conv(x, k).transpose(0, 2, 1)
            return (softmax(layer_norm(h, gain, bias)).transpose(0, 2, 1) * weights).sum()

        assert gradcheck(fn, [x, k, gain, bias]) < 1e-5

    def test_max_pool_gradient(self, rng: np.random.Generator) -> None:
        x = param(rng, 1, 2, 6, 6)
        assert gradcheck(lambda: (max_pool(x, 3, 2, 1) ** 2).sum(), [x]) < 1e-6


class TestOptimizer:
    @pytest.mark.parametrize("step, expected", [(25_000, 4e-4), (6_250, 1e-4), (100_000, 2e-4)])
    def test_noam_schedule(self, step: int, expected: float) -> None:
        assert NoamSchedule(4e-4, 25_000).lr(step) == pytest.approx(expected, rel=1e-12)

    def test_schedule_is_one_based(self) -> None:
        with pytest.raises(ContractError):
            NoamSchedule().lr(0)

    @given(st.integers(min_value=1, max_value=10**6))
    @settings(max_examples=50, deadline=None)
    def test_schedule_never_exceeds_peak(self, step: int) -> None:
        assert 0 < NoamSchedule(4e-4, 25_000).lr(step) <= 4e-4 + 1e-18

    def test_first_adam_step_moves_by_lr(self) -> None:
        w = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        lr = adam_step({"w": w}, {"w": np.array([0.5, -2.0])}, AdamState(), 1, NoamSchedule(1e-2, 1))
        assert lr == pytest.approx(1e-2)
        np.testing.assert_allclose(w.data, [1.0 - 1e-2, -1.0 + 1e-2], atol=1e-9)

    def test_non_finite_gradient_leaves_params(self) -> None:
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        w.grad = np.array([np.nan, 1.0])
        optimizer = Adam({"w": w})
        with pytest.raises(NumericError):
            optimizer.step()
        np.testing.assert_array_equal(w.data, [1.0, 2.0])
        assert optimizer.step_count == 0

    def test_adam_minimises_quadratic(self) -> None:
        w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        optimizer = Adam({"w": w}, NoamSchedule(0.5, 1))
        for _ in range(300):
            optimizer.zero_grad()
            backward((w * w).sum())
            optimizer.step()
        assert np.abs(w.data).max() < 0.2
