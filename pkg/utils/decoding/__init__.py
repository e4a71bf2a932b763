from .ctc_prefix import CTCPrefixScorer, CTCPrefixState
from .beam_search import (
    BeamHypothesis,
    beam_preset,
    beam_search,
    candidate_tokens,
    combined_score,
    decode_corpus,
    decode_utterance,
    exhaustive_search,
    load_language_presets,
    model_scorers,
)
