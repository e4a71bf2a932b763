from .module import BatchNorm, Conv, Dropout, Embedding, LayerNorm, Linear, Module
from .attention import MultiHeadAttention, causal_mask, relative_positions
from .frontends import (
    AudioCNNFrontend,
    AudioResidualFrontend,
    Frontend,
    PassthroughFrontend,
    VisualFrontend,
    build_frontend,
)
from .conformer import ConformerBlock, ConformerEncoder, EncoderOutput
from .decoder import CTCHead, TransformerDecoder, greedy_ctc
from .lm import CharLM
from .model import ModelOutput, VSRModel

__all__ = [
    "AudioCNNFrontend",
    "AudioResidualFrontend",
    "BatchNorm",
    "CTCHead",
    "CharLM",
    "ConformerBlock",
    "ConformerEncoder",
    "Conv",
    "Dropout",
    "Embedding",
    "EncoderOutput",
    "Frontend",
    "LayerNorm",
    "Linear",
    "ModelOutput",
    "Module",
    "MultiHeadAttention",
    "PassthroughFrontend",
    "TransformerDecoder",
    "VSRModel",
    "VisualFrontend",
    "build_frontend",
    "causal_mask",
    "greedy_ctc",
    "relative_positions",
]
