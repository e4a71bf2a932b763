from .features import (
    SPLITS,
    attach_arrays,
    load_features,
    load_split,
    read_manifest,
    read_tensor,
    save_features,
    write_manifest,
    write_tensor,
)
from .normalize import STD_FLOOR, compute_stats, normalize, normalize_utterance
from .augment import mask_length_cap, spatial_augment, time_mask
from .batching import AugmentOptions, collate, curriculum_filter, make_batches, token_targets
from .generator import CorpusGenerator, generate_corpus
from .dataset import CorpusData, load_corpus
