from .base import ConfigSection, DataModelObject, coerce_value
from .config_types import (
    FRONTEND_KINDS,
    SUPPORTED_LANGUAGES,
    AblationSwitches,
    ConformerConfig,
    CurriculumSchedule,
    DecodeConfig,
    DecoderConfig,
    ExperimentConfig,
    FrontendConfig,
    LmConfig,
    LossWeights,
    OptimizerConfig,
    TrainConfig,
)
from .corpus_types import (
    FRAME_RATE,
    AmbiguityMap,
    Batch,
    CorpusConfig,
    MaskLog,
    NormStats,
    Utterance,
)
from .vocabulary import BLANK, EOS, SOS, UNK, Vocabulary
from .result_types import CTCResult, DecodeRecord, ErrorCounts, ReportTable, RunReport
