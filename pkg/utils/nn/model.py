"""Hybrid CTC/attention recognizer: front-end, conformer, CTC head, decoder."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils.autodiff import Tensor
from utils.data_types.config_types import ExperimentConfig, FrontendConfig
from utils.data_types.vocabulary import Vocabulary
from utils.errors import ConfigurationError, ShapeError
from .conformer import ConformerEncoder, EncoderOutput
from .decoder import CTCHead, TransformerDecoder
from .frontends import Frontend, build_frontend
from .module import Linear, Module

MODALITIES = ("visual", "audio")


@dataclass
class ModelOutput:
    ctc_logprobs: Tensor
    decoder_logprobs: Optional[Tensor]
    encoder: EncoderOutput


class VSRModel(Module):
    """One recognizer over a single input stream.

    The same class builds the visual student, the visual teacher and the
    audio teacher; `modality` only selects which front-end config is used.
    The student additionally owns the two auxiliary predictors mapping its
    tapped representation onto the audio and visual teacher spaces.

    Parameters
    ----------
    cfg: ExperimentConfig
        Full experiment configuration.
    vocab: Vocabulary
        Output inventory shared by the CTC head and decoder.
    modality: str
        "visual" or "audio".
    seed: int
        Seeds parameter initialisation and every dropout stream.
    predictors: bool
        Whether to build `h_a` and `h_v`.
    """

    def __init__(
        self,
        cfg: ExperimentConfig,
        vocab: Vocabulary,
        modality: str = "visual",
        seed: int = 0,
        predictors: bool = True,
    ) -> None:
        super().__init__()
        if modality not in MODALITIES:
            raise ConfigurationError(f"Unknown modality `{modality}`, expected one of {MODALITIES}")
        self.modality = modality
        self.vocab = vocab
        self.seed = seed
        rng = np.random.default_rng(seed)
        frontend_cfg: FrontendConfig = cfg.visual_frontend if modality == "visual" else cfg.audio_frontend
        self.frontend: Frontend = build_frontend(frontend_cfg, rng)
        self.encoder = ConformerEncoder(cfg.encoder, self.frontend.output_dim, rng)
        self.ctc_head = CTCHead(cfg.encoder.model_dim, vocab, rng)
        self.decoder = TransformerDecoder(cfg.decoder, vocab, rng)
        self.has_predictors = predictors
        if predictors:
            self.h_a = Linear(cfg.encoder.model_dim, cfg.encoder.model_dim, rng)
            self.h_v = Linear(cfg.encoder.model_dim, cfg.encoder.model_dim, rng)
        self.seed_dropout(seed)

    def prepare_input(self, inputs: np.ndarray) -> Tensor:
        """Batch arrays from `collate` to the front-end layout.

        Feature mode `[B, T, D]` becomes `[B, D, T]`, image mode
        `[B, T, H, W]` becomes `[B, 1, T, H, W]` and waveforms `[B, S]`
        become `[B, 1, S]`.
        """
        inputs = np.asarray(inputs)
        if inputs.ndim == 2:
            return Tensor(inputs[:, None, :])
        if inputs.ndim == 3:
            return Tensor(np.ascontiguousarray(inputs.transpose(0, 2, 1)))
        if inputs.ndim == 4:
            return Tensor(inputs[:, None])
        raise ShapeError("Model inputs must be [B, S] waveforms, [B, T, D] features or [B, T, H, W] frames", inputs.shape)

    def encode(
        self,
        inputs: np.ndarray,
        lengths: np.ndarray,
        stop_at_tap: bool = False,
        tap_layer: Optional[int] = None,
    ) -> EncoderOutput:
        features = self.frontend(self.prepare_input(inputs), lengths)
        enc_lengths = np.minimum(self.frontend.output_lengths(lengths), features.shape[2])
        return self.encoder(features, enc_lengths, tap_layer=tap_layer, stop_at_tap=stop_at_tap)

    def forward(
        self,
        inputs: np.ndarray,
        lengths: np.ndarray,
        decoder_inputs: Optional[np.ndarray] = None,
    ) -> ModelOutput:
        encoded = self.encode(inputs, lengths)
        ctc = self.ctc_head(encoded.top)
        dec = None
        if decoder_inputs is not None:
            dec = self.decoder(encoded.top, decoder_inputs, encoded.lengths)
        return ModelOutput(ctc_logprobs=ctc, decoder_logprobs=dec, encoder=encoded)

    def predict_targets(self, tap: Tensor) -> tuple[Tensor, Tensor]:
        """(h_a(tap), h_v(tap))."""
        if not self.has_predictors:
            raise ConfigurationError("This model was built without auxiliary predictors")
        return self.h_a(tap), self.h_v(tap)
