import itertools
from math import log

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utils.autodiff import Tensor, backward, gradcheck, log_softmax
from utils.data_types.config_types import LossWeights
from utils.errors import ContractError, DataError
from utils.losses import (
    aux_loss,
    attention_loss,
    batch_ctc_loss,
    ctc_feasible,
    ctc_loss,
    reconcile_lengths,
    total_loss,
    vsr_loss,
)
from utils.nn.module import Linear


def brute_force_ctc(logprobs: np.ndarray, target: list[int]) -> float:
    """-log of the summed probability of every frame path collapsing to `target`."""
    frames, classes = logprobs.shape
    total = 0.0
    for path in itertools.product(range(classes), repeat=frames):
        collapsed = [c for i, c in enumerate(path) if c != 0 and (i == 0 or c != path[i - 1])]
        if collapsed == target:
            total += float(np.exp(sum(logprobs[t, c] for t, c in enumerate(path))))
    return -log(total) if total > 0 else float("inf")


def check_against_enumeration(frames: int, target: list[int], seed: int) -> None:
    logits = np.random.default_rng(seed).normal(size=(frames, 3))
    logprobs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    expected = brute_force_ctc(logprobs, target)
    result = ctc_loss(Tensor(logprobs), target)
    if expected == float("inf"):
        assert not result.feasible
    else:
        assert result.feasible
        assert result.loss.item() == pytest.approx(expected, rel=1e-9)


class TestCTCLoss:
    def test_single_alignment(self) -> None:
        logprobs = np.log(np.array([[0.4, 0.6]]))
        result = ctc_loss(Tensor(logprobs), [1])
        assert result.feasible
        assert result.loss.item() == pytest.approx(-log(0.6), abs=1e-12)

    def test_three_alignments(self) -> None:
        logprobs = np.log(np.full((2, 3), 1 / 3))
        assert ctc_loss(Tensor(logprobs), [1]).loss.item() == pytest.approx(-log(1 / 3), abs=1e-12)

    def test_repeated_label_needs_separating_blank(self) -> None:
        x = Tensor(np.log(np.full((2, 3), 1 / 3)), requires_grad=True)
        result = ctc_loss(x, [1, 1])
        assert not result.feasible
        assert result.loss.item() == float("inf")
        backward(result.loss)
        np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))

    @pytest.mark.parametrize(
        "frames, target, feasible",
        [(2, [1, 1], False), (3, [1, 1], True), (2, [1, 2], True), (1, [1, 2], False), (1, [], True), (0, [], False)],
    )
    def test_feasibility(self, frames: int, target: list[int], feasible: bool) -> None:
        if frames:
            assert ctc_feasible(frames, target) == feasible
        logprobs = np.log(np.full((frames, 3), 1 / 3))
        assert ctc_loss(Tensor(logprobs), target).feasible == feasible

    @settings(max_examples=40, deadline=None)
    @given(
        frames=st.integers(min_value=1, max_value=4),
        target=st.lists(st.integers(min_value=1, max_value=2), max_size=3),
        seed=st.integers(min_value=0, max_value=2**16),
    )
    def test_matches_path_enumeration(self, frames: int, target: list[int], seed: int) -> None:
        check_against_enumeration(frames, target, seed)

    @pytest.mark.slow
    @settings(max_examples=500, deadline=None)
    @given(
        frames=st.integers(min_value=1, max_value=6),
        target=st.lists(st.integers(min_value=1, max_value=2), max_size=4),
        seed=st.integers(min_value=0, max_value=2**16),
    )
    def test_matches_path_enumeration_up_to_six_frames(self, frames: int, target: list[int], seed: int) -> None:
        check_against_enumeration(frames, target, seed)

    @pytest.mark.parametrize("target", [[1], [1, 2], [2, 2], [1, 2, 1]])
    def test_gradient(self, rng: np.random.Generator, target: list[int]) -> None:
        x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        assert gradcheck(lambda: ctc_loss(log_softmax(x, axis=-1), target).loss, [x]) < 1e-6

    def test_blank_target_rejected(self) -> None:
        with pytest.raises(ContractError):
            ctc_loss(Tensor(np.zeros((3, 3))), [0, 1])

    def test_batch_skips_infeasible_samples(self) -> None:
        logprobs = np.log(np.full((2, 3, 3), 1 / 3))
        loss = batch_ctc_loss(Tensor(logprobs), [3, 1], [[1], [1, 2]])
        alone = ctc_loss(Tensor(logprobs[0]), [1]).loss.item()
        assert loss.item() == pytest.approx(alone / 2, abs=1e-12)

    def test_batch_respects_lengths(self, rng: np.random.Generator) -> None:
        logits = rng.normal(size=(1, 5, 3))
        logprobs = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
        padded = batch_ctc_loss(Tensor(logprobs), [3], [[2]]).item()
        assert padded == pytest.approx(brute_force_ctc(logprobs[0, :3], [2]), rel=1e-9)


class TestAttentionLoss:
    def test_perfect_predictions(self) -> None:
        logprobs = np.full((1, 3, 4), -50.0)
        targets = np.array([[1, 2, 0]])
        logprobs[0, np.arange(3), targets[0]] = 0.0
        assert attention_loss(Tensor(logprobs), targets).item() == pytest.approx(0.0)

    @pytest.mark.parametrize("smoothing", [0.0, 0.1])
    def test_uniform_predictions(self, smoothing: float) -> None:
        logprobs = Tensor(np.log(np.full((1, 3, 4), 0.25)))
        loss = attention_loss(logprobs, np.array([[1, 2, 0]]), label_smoothing=smoothing)
        assert loss.item() == pytest.approx(3 * log(4), abs=1e-12)

    def test_padding_and_batch_average(self) -> None:
        logprobs = Tensor(np.log(np.full((2, 3, 4), 0.25)))
        loss = attention_loss(logprobs, np.array([[1, 2, 0], [3, 0, -1]]))
        assert loss.item() == pytest.approx(5 * log(4) / 2, abs=1e-12)

    def test_length_mismatch(self) -> None:
        with pytest.raises(ContractError):
            attention_loss(Tensor(np.zeros((1, 3, 4))), np.array([[1, 0]]))

    def test_gradient(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        targets = np.array([[1, 2, 0], [3, 0, -1]])
        assert gradcheck(lambda: attention_loss(log_softmax(x, axis=-1), targets, 0.1), [x]) < 1e-6


class TestCombinedLosses:
    @pytest.mark.parametrize("weight, expected", [(0.1, 1.1), (0.0, 1.0), (1.0, 2.0)])
    def test_vsr_loss(self, weight: float, expected: float) -> None:
        assert vsr_loss(Tensor(2.0), Tensor(1.0), weight).item() == pytest.approx(expected)

    def test_vsr_weight_out_of_range(self) -> None:
        with pytest.raises(ContractError):
            vsr_loss(Tensor(2.0), Tensor(1.0), 1.5)

    def test_total_loss(self) -> None:
        assert total_loss(Tensor(1.1), Tensor(0.8)).item() == pytest.approx(1.9)
        vsr = Tensor(1.1)
        assert total_loss(vsr) is vsr

    @pytest.fixture
    def predictors(self, rng: np.random.Generator) -> tuple[Linear, Linear]:
        h_a, h_v = Linear(4, 4, rng), Linear(4, 4, rng)
        for layer in (h_a, h_v):
            layer.weight.data[:] = 0.0
            layer.bias.data[:] = 0.0
        return h_a, h_v

    def test_aux_loss_weighted_l1(self, rng: np.random.Generator, predictors: tuple[Linear, Linear]) -> None:
        tap = Tensor(rng.normal(size=(2, 5, 4)))
        terms = aux_loss(tap, *predictors, np.ones((2, 5, 4)), -np.ones((2, 5, 4)), LossWeights())
        assert terms.audio.item() == pytest.approx(0.4)
        assert terms.visual.item() == pytest.approx(0.4)
        assert terms.total.item() == pytest.approx(0.8)

    def test_aux_loss_zero_when_matching(self, rng: np.random.Generator, predictors: tuple[Linear, Linear]) -> None:
        zeros = np.zeros((1, 3, 4))
        terms = aux_loss(Tensor(rng.normal(size=(1, 3, 4))), *predictors, zeros, zeros, LossWeights())
        assert terms.total.item() == 0.0

    def test_disabled_term_is_omitted(self, rng: np.random.Generator, predictors: tuple[Linear, Linear]) -> None:
        weights = LossWeights(audio_aux_weight=0.0)
        terms = aux_loss(Tensor(rng.normal(size=(1, 3, 4))), *predictors, np.ones((1, 3, 4)), np.ones((1, 3, 4)), weights)
        assert terms.audio is None
        assert terms.total is terms.visual
        assert aux_loss(Tensor(np.zeros((1, 3, 4))), *predictors, None, None, LossWeights()).total is None

    def test_aux_loss_masks_padding(self, predictors: tuple[Linear, Linear]) -> None:
        targets = np.ones((2, 4, 4))
        targets[1, 2:] = 100.0
        terms = aux_loss(Tensor(np.zeros((2, 4, 4))), *predictors, targets, None, LossWeights(), np.array([4, 2]))
        assert terms.audio.item() == pytest.approx(0.4)

    def test_one_frame_difference_is_trimmed(self, predictors: tuple[Linear, Linear]) -> None:
        terms = aux_loss(Tensor(np.zeros((1, 5, 4))), *predictors, np.ones((1, 4, 4)), None, LossWeights())
        assert terms.audio.item() == pytest.approx(0.4)

    def test_gradient_reaches_predictors_only(self, rng: np.random.Generator) -> None:
        h_a, h_v = Linear(4, 4, rng), Linear(4, 4, rng)
        targets = rng.normal(size=(1, 3, 4))
        terms = aux_loss(Tensor(rng.normal(size=(1, 3, 4))), h_a, h_v, targets, targets, LossWeights())
        backward(terms.total)
        assert h_a.weight.grad is not None and h_v.weight.grad is not None

    @pytest.mark.parametrize("student, teacher, expected", [(10, 10, 10), (10, 11, 10), (11, 10, 10)])
    def test_reconcile_lengths(self, student: int, teacher: int, expected: int) -> None:
        assert reconcile_lengths(student, teacher) == expected

    def test_reconcile_lengths_too_far_apart(self) -> None:
        with pytest.raises(DataError):
            reconcile_lengths(10, 12)
        with pytest.raises(DataError):
            aux_loss(Tensor(np.zeros((1, 6, 4))), Linear(4, 4, np.random.default_rng(0)), Linear(4, 4, np.random.default_rng(1)),
                     np.zeros((1, 4, 4)), None, LossWeights())
