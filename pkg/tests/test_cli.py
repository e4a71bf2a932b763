from pathlib import Path

import pytest

from main import main
from utils import load_json_type_safe
from utils.config import write_ini
from utils.data_types.config_types import ExperimentConfig
from utils.data_types.result_types import ReportTable, RunReport
from utils.pipeline import read_decodes, write_report

CORPUS_FLAGS = [
    "--size", "10",
    "--alphabet", "ab",
    "--visual-dim", "4",
    "--audio-dim", "4",
    "--min-chars", "1",
    "--max-chars", "3",
    "--dev-fraction", "0.2",
    "--test-fraction", "0.2",
]
NO_AUX = ["--set", "ablation.audio_aux=false", "--set", "ablation.visual_aux=false"]


@pytest.fixture
def workspace(tmp_path: Path, tiny_cfg: ExperimentConfig) -> Path:
    write_ini(tiny_cfg, tmp_path / "tiny.ini")
    return tmp_path


def run(workspace: Path, *argv: str) -> int:
    command, *rest = argv
    return main([command, "--work-dir", str(workspace), "--log-dir", str(workspace / "logs"), "--no-console", "-y", *rest])


class TestCommandLine:
    def test_generate_train_decode_evaluate(self, workspace: Path) -> None:
        assert run(workspace, "generate-data", *CORPUS_FLAGS) == 0
        for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt", "stats.json", "lm_text.txt"):
            assert (workspace / "corpus" / name).exists()

        assert run(workspace, "train", "--config", str(workspace / "tiny.ini"), *NO_AUX) == 0
        run_dir = workspace / "run"
        assert (run_dir / "model_avg.vsrc").exists()
        assert (run_dir / "config.ini").exists() and (run_dir / "history.json").exists()
        assert sorted(p.name for p in (run_dir / "checkpoints").iterdir()) == ["epoch_001.vsrc", "epoch_002.vsrc"]

        checkpoint = str(run_dir / "model_avg.vsrc")
        assert run(workspace, "decode", "--config", str(workspace / "tiny.ini"), "--checkpoint", checkpoint) == 0
        records = read_decodes(workspace / "decodes.jsonl")
        assert len(records) == 2

        decodes = str(workspace / "decodes.jsonl")
        assert run(workspace, "evaluate", "--config", str(workspace / "tiny.ini"), "--decodes", decodes) == 0
        result = load_json_type_safe(workspace / "evaluation.json", "dict")
        assert result["split"] == "test" and result["unit"] == "char"
        assert 0.0 <= result["rate"]

        out = workspace / "averaged.vsrc"
        assert run(workspace, "average-checkpoints", "--run-dir", str(run_dir), "--last", "2", "--out", str(out)) == 0
        assert out.read_bytes() == (run_dir / "model_avg.vsrc").read_bytes()

    def test_aux_without_teachers_is_a_config_error(self, workspace: Path) -> None:
        assert run(workspace, "generate-data", *CORPUS_FLAGS) == 0
        assert run(workspace, "train", "--config", str(workspace / "tiny.ini")) == 2
        assert not (workspace / "run").exists()

    def test_missing_corpus_is_a_data_error(self, workspace: Path) -> None:
        assert run(workspace, "train", "--config", str(workspace / "tiny.ini"), *NO_AUX) == 3
        assert run(workspace, "train-lm", "--config", str(workspace / "tiny.ini")) == 3

    @pytest.mark.parametrize(
        "argv",
        [
            ("train", "--preset", "nonexistent"),
            ("train", "--set", "encoder.num_blocks"),
            ("train", "--set", "decode.language=de"),
            ("generate-data", "--min-chars", "5", "--max-chars", "2"),
            ("decode",),
        ],
    )
    def test_config_errors(self, workspace: Path, argv: tuple[str, ...]) -> None:
        expected = 3 if argv[0] == "generate-data" else 2
        assert run(workspace, *argv) == expected

    def test_report_of_missing_file(self, workspace: Path) -> None:
        assert run(workspace, "report", str(workspace / "absent.json")) == 3

    def test_merging_duplicate_rows_is_a_contract_error(self, workspace: Path) -> None:
        table = ReportTable(title="Ablation study", rows=[RunReport(name="Full model", per_seed={0: 10.0, 1: 12.0})])
        paths = write_report(table, workspace / "reports")
        assert run(workspace, "report", str(paths["json"])) == 0
        assert run(workspace, "report", str(paths["json"]), str(paths["json"])) == 2

    @pytest.mark.parametrize(
        "sweep",
        [
            ("--layer-sweep", "3"),
            ("--layer-sweep", "0", "0"),
            ("--beam-sweep", "0"),
            ("--beam-sweep", "2", "2"),
            ("--seeds", "0", "--beam-sweep", "2"),
        ],
    )
    def test_invalid_sweeps_exit_before_training(self, workspace: Path, sweep: tuple[str, ...]) -> None:
        assert run(workspace, "generate-data", *CORPUS_FLAGS) == 0
        argv = ["ablate", "--config", str(workspace / "tiny.ini"), "--out", str(workspace / "sweep")]
        if "--seeds" not in sweep:
            argv += ["--seeds", "0", "1"]
        assert run(workspace, *argv, *sweep) == 2
        assert not (workspace / "sweep" / "teachers").exists()

    def test_sweeps_exclude_each_other(self, workspace: Path) -> None:
        with pytest.raises(SystemExit):
            run(workspace, "ablate", "--teacher-quality", "--beam-sweep", "1")

    def test_unknown_command_exits(self, workspace: Path) -> None:
        with pytest.raises(SystemExit):
            main(["transmogrify"])
