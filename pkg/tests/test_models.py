import numpy as np
import pytest

from utils.autodiff import Tensor, backward, gradcheck, length_mask, logsumexp, no_grad
from utils.data_types.config_types import (
    ConformerConfig,
    DecoderConfig,
    ExperimentConfig,
    FrontendConfig,
    LmConfig,
)
from utils.data_types.vocabulary import SOS, Vocabulary
from utils.errors import ConfigurationError, ContractError, DataError, ShapeError
from utils.nn import CharLM, ConformerBlock, ConformerEncoder, CTCHead, TransformerDecoder, VSRModel, build_frontend
from utils.nn.decoder import greedy_ctc

TINY_ENCODER = ConformerConfig(
    num_blocks=2, model_dim=8, ff_dim=16, head_dim=4, dropout=0.0, conv_kernel=3, tap_layer=1, max_relative=4
)
TINY_DECODER = DecoderConfig(num_blocks=1, model_dim=8, ff_dim=16, head_dim=4, dropout=0.0, max_positions=32)


# (kind, input shape, traced (stage, output shape) rows) at width multiplier 1
FULL_WIDTH_TRACES = [
    (
        "visual-3d-residual",
        (2, 1, 29, 88, 88),
        [
            ("stem_conv", (2, 64, 29, 44, 44)),
            ("stem_pool", (2, 64, 29, 22, 22)),
            ("reshape", (58, 64, 22, 22)),
            ("stage1", (58, 64, 22, 22)),
            ("stage2", (58, 128, 11, 11)),
            ("stage3", (58, 256, 6, 6)),
            ("stage4", (58, 512, 3, 3)),
            ("global_pool", (58, 512)),
            ("output", (2, 512, 29)),
        ],
    ),
    (
        "audio-1d-residual",
        (2, 1, 16_000),
        [
            ("stem_conv", (2, 64, 4000)),
            ("stage1", (2, 64, 4000)),
            ("stage2", (2, 128, 2000)),
            ("stage3", (2, 256, 1000)),
            ("stage4", (2, 512, 500)),
            ("avg_pool", (2, 512, 25)),
        ],
    ),
    (
        "audio-1d-cnn",
        (2, 1, 16_000),
        [
            ("conv1", (2, 64, 4000)),
            ("conv2", (2, 64, 1000)),
            ("conv3", (2, 128, 500)),
            ("conv4", (2, 256, 250)),
            ("conv5", (2, 512, 125)),
            ("avg_pool", (2, 512, 25)),
        ],
    ),
]


@pytest.fixture
def vocab() -> Vocabulary:
    return Vocabulary("ab ")


class TestFrontends:
    @pytest.mark.parametrize("kind, shape, expected", FULL_WIDTH_TRACES, ids=[row[0] for row in FULL_WIDTH_TRACES])
    def test_full_width_shape_trace(
        self, rng: np.random.Generator, kind: str, shape: tuple[int, ...], expected: list[tuple[str, tuple[int, ...]]]
    ) -> None:
        frontend = build_frontend(FrontendConfig(kind=kind), rng).eval()
        with no_grad():
            out, trace = frontend.traced(Tensor(rng.normal(size=shape)))
        assert trace == expected
        assert out.shape == expected[-1][1]
        assert frontend.output_dim == 512
        assert frontend.trace is None

    def test_visual_quarter_width_shape_chain(self, rng: np.random.Generator) -> None:
        frontend = build_frontend(FrontendConfig(kind="visual-3d-residual", width_multiplier=0.25), rng)
        out, trace = frontend.traced(Tensor(rng.normal(size=(1, 1, 5, 24, 24))))
        assert out.shape == (1, 128, 5)
        stages = dict(trace)
        assert stages["stem_conv"] == (1, 16, 5, 12, 12)
        assert stages["stem_pool"] == (1, 16, 5, 6, 6)
        assert stages["stage4"] == (5, 128, 1, 1)

    def test_visual_single_frame_keeps_time(self, rng: np.random.Generator) -> None:
        frontend = build_frontend(FrontendConfig(kind="visual-3d-residual", width_multiplier=0.125), rng)
        assert frontend(Tensor(rng.normal(size=(1, 1, 1, 24, 24)))).shape == (1, 64, 1)

    def test_visual_empty_frame_rejected(self, rng: np.random.Generator) -> None:
        frontend = build_frontend(FrontendConfig(kind="visual-3d-residual", width_multiplier=0.125), rng)
        with pytest.raises(ConfigurationError):
            frontend(Tensor(np.zeros((1, 1, 2, 0, 4))))

    @pytest.mark.parametrize("samples, frames", [(640, 1), (16_000, 25), (16_000 + 300, 25)])
    def test_audio_residual_frame_rate(self, rng: np.random.Generator, samples: int, frames: int) -> None:
        frontend = build_frontend(FrontendConfig(kind="audio-1d-residual", width_multiplier=0.125), rng)
        out = frontend(Tensor(rng.normal(size=(1, 1, samples))))
        assert out.shape == (1, 64, frames)
        assert frontend.output_lengths(np.array([samples])).tolist() == [frames]

    def test_audio_cnn_frame_rate(self, rng: np.random.Generator) -> None:
        frontend = build_frontend(FrontendConfig(kind="audio-1d-cnn", width_multiplier=0.25), rng)
        assert frontend(Tensor(rng.normal(size=(1, 1, 32_000)))).shape == (1, 128, 50)

    def test_audio_shorter_than_a_frame(self, rng: np.random.Generator) -> None:
        frontend = build_frontend(FrontendConfig(kind="audio-1d-residual", width_multiplier=0.125), rng)
        with pytest.raises(DataError):
            frontend(Tensor(np.zeros((1, 1, 639))))

    def test_passthrough(self, rng: np.random.Generator) -> None:
        frontend = build_frontend(FrontendConfig(kind="passthrough", output_dim=8), rng)
        x = Tensor(rng.normal(size=(1, 8, 10)))
        assert frontend(x) is x
        with pytest.raises(ShapeError):
            frontend(Tensor(np.zeros((1, 7, 10))))

    def test_unknown_kind(self) -> None:
        with pytest.raises(ConfigurationError):
            FrontendConfig(kind="shufflenet").validate()


class TestConformerEncoder:
    def test_embedding_projection_shape(self, rng: np.random.Generator) -> None:
        encoder = ConformerEncoder(ConformerConfig(num_blocks=0, tap_layer=0), 512, rng)
        assert encoder.embed(Tensor(rng.normal(size=(1, 512, 10)))).shape == (1, 10, 256)

    def test_zero_input_gives_bias_only(self, rng: np.random.Generator) -> None:
        encoder = ConformerEncoder(ConformerConfig(num_blocks=0, model_dim=8, head_dim=4, tap_layer=0), 6, rng)
        encoder.embed_proj.bias.data[:] = rng.normal(size=8)
        out = encoder.embed(Tensor(np.zeros((1, 6, 4)))).data
        np.testing.assert_array_equal(out[0], np.tile(encoder.embed_proj.bias.data, (4, 1)))

    def test_embedding_gradient(self, rng: np.random.Generator) -> None:
        encoder = ConformerEncoder(ConformerConfig(num_blocks=0, model_dim=8, head_dim=4, tap_layer=0), 6, rng)
        x = Tensor(rng.normal(size=(1, 6, 3)), requires_grad=True)
        assert gradcheck(lambda: (encoder.embed(x) ** 2).sum(), [x, *encoder.parameters()]) < 1e-5

    def test_tap_is_block_output(self, rng: np.random.Generator) -> None:
        encoder = ConformerEncoder(TINY_ENCODER, 6, rng).eval()
        out = encoder(Tensor(rng.normal(size=(2, 6, 5))), np.array([5, 3]), keep_hidden=True)
        np.testing.assert_array_equal(out.tap.data, out.hidden[1].data)
        np.testing.assert_array_equal(out.top.data, out.hidden[2].data)
        top_tap = encoder(Tensor(rng.normal(size=(1, 6, 4))), tap_layer=2)
        assert top_tap.tap is top_tap.top

    def test_stop_at_tap_matches_full_run(self, rng: np.random.Generator) -> None:
        encoder = ConformerEncoder(TINY_ENCODER, 6, rng).eval()
        x = Tensor(rng.normal(size=(1, 6, 5)))
        np.testing.assert_array_equal(encoder(x, stop_at_tap=True).tap.data, encoder(x).tap.data)

    def test_padded_tail_does_not_leak(self, rng: np.random.Generator) -> None:
        encoder = ConformerEncoder(TINY_ENCODER, 6, rng).eval()
        x = rng.normal(size=(1, 6, 7))
        y = x.copy()
        y[:, :, 4:] = rng.normal(size=(1, 6, 3)) * 50
        lengths = np.array([4])
        a = encoder(Tensor(x), lengths).top.data[:, :4]
        b = encoder(Tensor(y), lengths).top.data[:, :4]
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)

    def test_single_frame_block(self, rng: np.random.Generator) -> None:
        block = ConformerBlock(TINY_ENCODER, rng).eval()
        out = block(Tensor(rng.normal(size=(1, 1, 8))), np.ones((1, 1), dtype=bool))
        assert out.shape == (1, 1, 8) and np.all(np.isfinite(out.data))

    def test_block_gradient(self, rng: np.random.Generator) -> None:
        block = ConformerBlock(TINY_ENCODER, rng).eval()
        x = Tensor(rng.normal(size=(1, 3, 8)), requires_grad=True)
        weights = rng.normal(size=(1, 3, 8))
        valid = np.ones((1, 3), dtype=bool)
        assert gradcheck(lambda: (block(x, valid) * weights).sum(), [x, *block.parameters()]) < 1e-4

    def test_deterministic(self, rng: np.random.Generator) -> None:
        x = rng.normal(size=(1, 6, 5))
        runs = [ConformerEncoder(TINY_ENCODER, 6, np.random.default_rng(5)).eval()(Tensor(x)) for _ in range(2)]
        np.testing.assert_array_equal(runs[0].top.data, runs[1].top.data)
        np.testing.assert_array_equal(runs[0].tap.data, runs[1].tap.data)

    def test_invalid_geometry(self) -> None:
        with pytest.raises(ConfigurationError):
            ConformerConfig(model_dim=10, head_dim=4).validate()
        with pytest.raises(ConfigurationError):
            ConformerConfig(num_blocks=3, tap_layer=4).validate()


class TestDecoderAndHeads:
    @pytest.fixture
    def decoder(self, vocab: Vocabulary) -> TransformerDecoder:
        return TransformerDecoder(TINY_DECODER, vocab, np.random.default_rng(3)).eval()

    def test_step_is_normalised(self, decoder: TransformerDecoder, rng: np.random.Generator) -> None:
        out = decoder.decode_step(Tensor(rng.normal(size=(5, 8))), [SOS, 4, 5])
        assert out.shape == (5,)
        assert abs(float(logsumexp(out))) < 1e-10

    def test_incremental_matches_teacher_forcing(self, decoder: TransformerDecoder, rng: np.random.Generator) -> None:
        memory = Tensor(rng.normal(size=(1, 5, 8)))
        tokens = [SOS, 4, 6, 5, 4]
        full = decoder(memory, np.array([tokens])).data[0]
        for i in range(len(tokens)):
            np.testing.assert_allclose(decoder.decode_step(memory, tokens[: i + 1]), full[i], atol=1e-10)

    def test_causality(self, decoder: TransformerDecoder, rng: np.random.Generator) -> None:
        memory = Tensor(rng.normal(size=(1, 5, 8)))
        a = decoder(memory, np.array([[SOS, 4, 5, 6]])).data[0]
        b = decoder(memory, np.array([[SOS, 4, 6, 4]])).data[0]
        np.testing.assert_array_equal(a[:2], b[:2])
        assert not np.allclose(a[2], b[2])

    def test_prefix_must_start_with_sos(self, decoder: TransformerDecoder, rng: np.random.Generator) -> None:
        with pytest.raises(ContractError):
            decoder.decode_step(Tensor(rng.normal(size=(5, 8))), [4])

    def test_ctc_head(self, vocab: Vocabulary, rng: np.random.Generator) -> None:
        head = CTCHead(8, vocab, rng)
        top = Tensor(rng.normal(size=(2, 4, 8)), requires_grad=True)
        out = head(top).data
        assert out.shape == (2, 4, vocab.head_size)
        np.testing.assert_allclose(np.exp(out).sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(out, head(top).data)
        weights = rng.normal(size=(2, 4, vocab.head_size))
        assert gradcheck(lambda: (head(top) * weights).sum(), [top, *head.parameters()]) < 1e-5

    def test_greedy_ctc_collapses(self, vocab: Vocabulary) -> None:
        # CTC positions: 0 blank, 1 unk, 2 "a", 3 "b", 4 " "
        path = [2, 2, 0, 2, 3, 3, 0]
        logprobs = np.log(np.full((len(path), vocab.head_size), 0.01))
        logprobs[np.arange(len(path)), path] = 0.0
        assert greedy_ctc(logprobs, vocab) == "aab"


class TestCharLM:
    @pytest.fixture
    def lm(self, vocab: Vocabulary) -> CharLM:
        cfg = LmConfig(num_blocks=1, model_dim=8, ff_dim=16, head_dim=4, dropout=0.0, max_positions=32)
        return CharLM(cfg, vocab, np.random.default_rng(2)).eval()

    def test_zeroed_output_is_uniform(self, lm: CharLM, vocab: Vocabulary) -> None:
        lm.output.weight.data[:] = 0.0
        lm.output.bias.data[:] = 0.0
        np.testing.assert_allclose(lm.lm_score("ab"), -np.log(vocab.head_size), atol=1e-12)

    def test_normalised_and_accepts_characters(self, lm: CharLM) -> None:
        by_text = lm.lm_score("ab")
        by_ids = lm.lm_score([SOS, 4, 5])
        assert abs(float(logsumexp(by_text))) < 1e-10
        np.testing.assert_array_equal(by_text, by_ids)

    def test_out_of_vocabulary_scored_as_unk(self, lm: CharLM) -> None:
        np.testing.assert_array_equal(lm.lm_score("a#"), lm.lm_score([SOS, 4, 3]))
        assert lm.unknown_tokens == 1

    def test_sequence_logprob_is_sum_of_steps(self, lm: CharLM) -> None:
        expected = lm.lm_score("")[Vocabulary.to_output(4)] + lm.lm_score("a")[0]
        assert lm.sequence_logprob("a") == pytest.approx(expected, abs=1e-12)


class TestVSRModel:
    @pytest.fixture
    def cfg(self) -> ExperimentConfig:
        return ExperimentConfig(
            visual_frontend=FrontendConfig(kind="passthrough", output_dim=6),
            audio_frontend=FrontendConfig(kind="passthrough", output_dim=6),
            encoder=TINY_ENCODER,
            decoder=TINY_DECODER,
        )

    def test_forward_shapes(self, cfg: ExperimentConfig, vocab: Vocabulary, rng: np.random.Generator) -> None:
        model = VSRModel(cfg, vocab, seed=0).eval()
        out = model(rng.normal(size=(2, 5, 6)), np.array([5, 3]), np.array([[SOS, 4, 5], [SOS, 6, 2]]))
        assert out.ctc_logprobs.shape == (2, 5, vocab.head_size)
        assert out.decoder_logprobs is not None and out.decoder_logprobs.shape == (2, 3, vocab.head_size)
        assert out.encoder.lengths.tolist() == [5, 3]

    def test_predictors_receive_gradient(self, cfg: ExperimentConfig, vocab: Vocabulary, rng: np.random.Generator) -> None:
        model = VSRModel(cfg, vocab, seed=0).eval()
        tap = model.encode(rng.normal(size=(1, 4, 6)), np.array([4])).tap
        h_a, h_v = model.predict_targets(tap)
        backward((h_a * h_a).sum() + (h_v * h_v).sum())
        assert model.h_a.weight.grad is not None and model.h_v.weight.grad is not None

    def test_without_predictors(self, cfg: ExperimentConfig, vocab: Vocabulary, rng: np.random.Generator) -> None:
        model = VSRModel(cfg, vocab, predictors=False)
        assert not any(name.startswith("h_") for name in model.named_parameters())
        with pytest.raises(ConfigurationError):
            model.predict_targets(Tensor(np.zeros((1, 2, 8))))

    def test_same_seed_same_parameters(self, cfg: ExperimentConfig, vocab: Vocabulary) -> None:
        a, b = VSRModel(cfg, vocab, seed=4).state_dict(), VSRModel(cfg, vocab, seed=4).state_dict()
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_rejects_bad_input_rank(self, cfg: ExperimentConfig, vocab: Vocabulary) -> None:
        with pytest.raises(ShapeError):
            VSRModel(cfg, vocab).prepare_input(np.zeros(3))

    def test_length_mask_helper(self) -> None:
        assert length_mask([2, 0], 3).tolist() == [[True, True, False], [False, False, False]]
