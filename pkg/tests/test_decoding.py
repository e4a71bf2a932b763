import itertools
from math import log
from typing import Sequence

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utils.autodiff import Tensor
from utils.data_types.config_types import DecodeConfig
from utils.data_types.vocabulary import EOS, SOS, Vocabulary
from utils.decoding import (
    CTCPrefixScorer,
    beam_preset,
    beam_search,
    combined_score,
    exhaustive_search,
    model_scorers,
)
from utils.errors import ConfigurationError, ContractError


def normalised(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    logits = rng.normal(size=shape) * 2.0
    return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))


def prefix_scorer(seed: int, width: int):
    """Random but prefix-determined next-token distributions."""

    def step(prefix: Sequence[int]) -> np.ndarray:
        return normalised(np.random.default_rng([seed, *prefix]), (width,))

    return step


def check_wide_beam(seed: int, frames: int) -> None:
    """A beam wider than the hypothesis space finds the exhaustive optimum."""
    vocab = Vocabulary("ab")
    ctc = normalised(np.random.default_rng(seed), (frames, vocab.head_size))
    att, lm = prefix_scorer(seed + 1, vocab.head_size), prefix_scorer(seed + 2, vocab.head_size)
    cfg = DecodeConfig(beam_size=1000, ctc_weight=0.3, lm_weight=0.5)
    best = exhaustive_search(att, ctc, vocab, cfg, lm)
    found = beam_search(att, ctc, vocab, cfg, lm)[0]
    assert found.tokens == best.tokens
    assert found.combined(0.3, 0.5) == pytest.approx(best.combined(0.3, 0.5), abs=1e-9)


def check_narrow_beam(seed: int) -> None:
    vocab = Vocabulary("ab")
    ctc = normalised(np.random.default_rng(seed), (3, vocab.head_size))
    att = prefix_scorer(seed + 1, vocab.head_size)
    cfg = DecodeConfig(beam_size=1, ctc_weight=0.1, lm_weight=0.0)
    narrow = beam_search(att, ctc, vocab, cfg)[0]
    best = exhaustive_search(att, ctc, vocab, cfg)
    assert best.combined(0.1, 0.0) >= narrow.combined(0.1, 0.0) - 1e-12


@pytest.fixture
def vocab() -> Vocabulary:
    return Vocabulary("ab")


class TestCTCPrefixScorer:
    def test_single_frame_extension(self) -> None:
        scorer = CTCPrefixScorer(np.log(np.array([[0.4, 0.6]])))
        child = scorer.extend(scorer.initial_state(), [1])[0]
        assert scorer.final_score(child) == pytest.approx(log(0.6), abs=1e-12)
        assert child.log_psi == pytest.approx(log(0.6), abs=1e-12)
        assert scorer.final_score(scorer.initial_state()) == pytest.approx(log(0.4), abs=1e-12)

    @pytest.mark.parametrize("frames", [1, 2, 3])
    def test_labelings_sum_to_one(self, rng: np.random.Generator, frames: int) -> None:
        scorer = CTCPrefixScorer(normalised(rng, (frames, 3)))
        total = 0.0
        for length in range(frames + 1):
            for labels in itertools.product([1, 2], repeat=length):
                total += np.exp(scorer.final_score(scorer.prefix_state(labels)))
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_prefix_probability_sums_its_completions(self, rng: np.random.Generator) -> None:
        scorer = CTCPrefixScorer(normalised(rng, (3, 3)))
        completions = [(1,), (1, 1), (1, 2), (1, 1, 1), (1, 1, 2), (1, 2, 1), (1, 2, 2)]
        expected = sum(np.exp(scorer.final_score(scorer.prefix_state(c))) for c in completions)
        assert np.exp(scorer.prefix_state((1,)).log_psi) == pytest.approx(expected, abs=1e-10)

    def test_incremental_matches_from_scratch(self, rng: np.random.Generator) -> None:
        scorer = CTCPrefixScorer(normalised(rng, (6, 4)))
        state = scorer.initial_state()
        for label in (2, 2, 3, 1):
            children = scorer.extend(state, [1, 2, 3])
            state = children[label - 1]
            scratch = scorer.prefix_state(state.prefix)
            np.testing.assert_allclose(state.r, scratch.r, atol=1e-12)
            assert state.log_psi == pytest.approx(scratch.log_psi, abs=1e-12)

    def test_contracts(self, rng: np.random.Generator) -> None:
        scorer = CTCPrefixScorer(normalised(rng, (3, 3)))
        state = scorer.initial_state()
        with pytest.raises(ContractError):
            scorer.extend(state, [0])
        with pytest.raises(ContractError):
            scorer.check(state, [1])
        other = CTCPrefixScorer(normalised(rng, (4, 3)))
        with pytest.raises(ContractError):
            other.extend(state, [1])


class TestBeamSearch:
    def test_combined_score(self) -> None:
        assert combined_score(-1.0, -2.0, -0.5, 0.1, 0.6) == pytest.approx(-2.2)
        assert combined_score(float("-inf"), -2.0, 0.0, 0.0, 0.0) == -2.0

    def test_zero_frames_give_empty_transcript(self, vocab: Vocabulary) -> None:
        hyps = beam_search(prefix_scorer(0, vocab.head_size), np.zeros((0, vocab.head_size)), vocab, DecodeConfig())
        assert hyps[0].transcript(vocab) == ""
        assert exhaustive_search(prefix_scorer(0, 4), np.zeros((0, 4)), vocab, DecodeConfig()).tokens == (SOS, EOS)

    def test_invalid_beam_size(self, vocab: Vocabulary) -> None:
        with pytest.raises(ConfigurationError):
            beam_search(prefix_scorer(0, 4), np.zeros((2, 4)), vocab, DecodeConfig(beam_size=0))

    def test_greedy_attention_when_other_weights_vanish(self, rng: np.random.Generator, vocab: Vocabulary) -> None:
        att = prefix_scorer(7, vocab.head_size)
        cfg = DecodeConfig(beam_size=1, ctc_weight=0.0, lm_weight=0.0, max_len=4)
        tokens = [SOS]
        while len(tokens) <= cfg.max_len:
            position = int(np.argmax(att(tokens)))
            tokens.append(Vocabulary.from_output(position))
            if tokens[-1] == EOS:
                break
        else:
            tokens.append(EOS)
        best = beam_search(att, normalised(rng, (4, vocab.head_size)), vocab, cfg)[0]
        assert best.tokens == tuple(tokens)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**16), frames=st.integers(min_value=1, max_value=3))
    def test_wide_beam_matches_exhaustive_search(self, seed: int, frames: int) -> None:
        check_wide_beam(seed, frames)

    @pytest.mark.slow
    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**16), frames=st.integers(min_value=1, max_value=3))
    def test_wide_beam_matches_exhaustive_search_many(self, seed: int, frames: int) -> None:
        check_wide_beam(seed, frames)

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**16))
    def test_exhaustive_never_worse_than_narrow_beam(self, seed: int) -> None:
        check_narrow_beam(seed)

    @pytest.mark.slow
    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**16))
    def test_exhaustive_never_worse_than_narrow_beam_many(self, seed: int) -> None:
        check_narrow_beam(seed)

    def test_component_scores_are_recomputable(self, rng: np.random.Generator, vocab: Vocabulary) -> None:
        ctc = normalised(rng, (4, vocab.head_size))
        att, lm = prefix_scorer(3, vocab.head_size), prefix_scorer(4, vocab.head_size)
        hyp = beam_search(att, ctc, vocab, DecodeConfig(beam_size=4, lm_weight=0.6), lm)[0]
        s_att = sum(att(hyp.tokens[:i])[Vocabulary.to_output(hyp.tokens[i])] for i in range(1, len(hyp.tokens)))
        assert hyp.s_att == pytest.approx(s_att, abs=1e-12)
        scorer = CTCPrefixScorer(ctc)
        expected_ctc = scorer.final_score(scorer.prefix_state([Vocabulary.to_ctc(t) for t in hyp.labels]))
        assert hyp.s_ctc == pytest.approx(expected_ctc, abs=1e-12)

    def test_results_sorted_and_deterministic(self, rng: np.random.Generator, vocab: Vocabulary) -> None:
        ctc = normalised(rng, (5, vocab.head_size))
        cfg = DecodeConfig(beam_size=3, lm_weight=0.0)
        runs = [beam_search(prefix_scorer(9, vocab.head_size), ctc, vocab, cfg) for _ in range(2)]
        assert [h.tokens for h in runs[0]] == [h.tokens for h in runs[1]]
        scores = [h.combined(cfg.ctc_weight, cfg.lm_weight) for h in runs[0]]
        assert scores == sorted(scores, reverse=True)
        assert all(h.ended and h.tokens[-1] == EOS for h in runs[0])

    def test_length_cap(self, rng: np.random.Generator, vocab: Vocabulary) -> None:
        cfg = DecodeConfig(beam_size=4, ctc_weight=0.0, lm_weight=0.0, max_len=2)
        hyps = beam_search(prefix_scorer(1, vocab.head_size), normalised(rng, (6, vocab.head_size)), vocab, cfg)
        assert all(len(h.labels) <= 2 for h in hyps)

    def test_model_scorers_need_one_utterance(self, vocab: Vocabulary) -> None:
        with pytest.raises(ContractError):
            model_scorers(None, Tensor(np.zeros((1, 3, 8))))


class TestLanguagePresets:
    @pytest.mark.parametrize(
        "language, beam, weight",
        [("en", 40, 0.6), ("zh", 20, 0.3), ("es", 35, 0.4), ("it", 25, 0.5), ("fr", 40, 0.3), ("pt", 35, 0.3)],
    )
    def test_presets(self, language: str, beam: int, weight: float) -> None:
        cfg = beam_preset(language)
        assert (cfg.beam_size, cfg.lm_weight, cfg.ctc_weight, cfg.language) == (beam, weight, 0.1, language)

    def test_unknown_language_lists_supported(self) -> None:
        with pytest.raises(ConfigurationError, match="en"):
            beam_preset("de")
