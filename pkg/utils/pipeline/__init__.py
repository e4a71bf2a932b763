from .checkpoint import (
    Checkpoint,
    average_checkpoints,
    dropout_generators,
    generator_states,
    load_checkpoint,
    model_checkpoint,
    restore_lm,
    restore_generators,
    restore_model,
    save_checkpoint,
)
from .metrics import UNITS, edit_distance_counts, score_corpus, tokenize
from .teachers import Teachers, TeacherTrainer, load_teachers, train_teachers
from .trainer import Trainer, TrainResult, batch_loss, losses_from_output, model_inputs
from .lm_training import LmTrainer, lm_batch, lm_perplexity, read_lm_text, train_lm
from .evaluation import evaluate_model, read_decodes, score_decodes, write_decodes
from .ablation import (
    ABLATION_ROWS,
    CONVERGED_TEACHERS,
    DEFAULT_BEAM_SIZES,
    ONE_EPOCH_TEACHERS,
    AblationRow,
    AblationRunner,
    ablate,
    sweep_beam_size,
    sweep_layer_position,
    teacher_quality,
)
from .report import load_report, render_report, report_csv, write_report
