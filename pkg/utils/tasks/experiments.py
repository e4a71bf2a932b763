from argparse import ArgumentParser
from pathlib import Path

from utils.data_types.result_types import ReportTable
from utils.errors import ContractError
from utils.pipeline.ablation import DEFAULT_BEAM_SIZES, AblationRunner
from utils.pipeline.checkpoint import load_checkpoint, restore_lm
from utils.pipeline.metrics import UNITS
from utils.pipeline.report import load_report, render_report, write_report
from utils.pipeline.teachers import load_teachers
from . import Task, add_corpus_argument


class AblateTask(Task):
    name = "ablate"
    help = "Multi-seed ablation of the auxiliary tasks and time masking, teacher quality, tap layer or beam size"

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        add_corpus_argument(parser)
        parser.add_argument("--out", type=Path, help="Experiment directory (default: <work dir>/ablation)")
        parser.add_argument("--seeds", type=int, nargs="+", help="Seeds to run (default: train.seeds)")
        parser.add_argument("--teachers", type=Path, help="Reuse teachers instead of training them")
        parser.add_argument("--lm", type=Path, help="Language model checkpoint for decoding")
        parser.add_argument("--split", choices=("dev", "test"), default="test", help="Scored split (default: test)")
        parser.add_argument("--unit", choices=UNITS, default="char", help="char (CER) or word (WER), default char")
        study = parser.add_mutually_exclusive_group()
        study.add_argument(
            "--teacher-quality",
            action="store_true",
            help="Compare students of converged and 1-epoch teachers on the dev split instead",
        )
        study.add_argument(
            "--layer-sweep",
            type=int,
            nargs="*",
            metavar="LAYER",
            help="Sweep the auxiliary tap layer (default layers: 0, 2, ... encoder.num_blocks)",
        )
        study.add_argument(
            "--beam-sweep",
            type=int,
            nargs="*",
            metavar="SIZE",
            help=f"Sweep the decoding beam size (default sizes: {' '.join(map(str, DEFAULT_BEAM_SIZES))})",
        )

    def run(self) -> None:
        seeds = self.args.seeds or self.cfg.train.seeds
        out_dir = self.prepare_output_dir(self.path_arg("out", "ablation"))
        lm = restore_lm(load_checkpoint(self.args.lm)) if self.args.lm else None
        split = "dev" if self.args.teacher_quality else self.args.split
        runner = AblationRunner(self.cfg, self.corpus(), out_dir, lm, split, self.args.unit)
        teachers = load_teachers(self.args.teachers) if self.args.teachers and not self.args.teacher_quality else None
        if self.args.teacher_quality:
            if self.args.teachers:
                self.warning("--teachers is ignored by the teacher-quality study, both teacher sets are trained")
            table = runner.teacher_quality(seeds)
        elif self.args.layer_sweep is not None:
            table = runner.sweep_layer_position(seeds, self.args.layer_sweep or None, teachers)
        elif self.args.beam_sweep is not None:
            table = runner.sweep_beam_size(seeds, self.args.beam_sweep or DEFAULT_BEAM_SIZES, teachers)
        else:
            table = runner.ablate(seeds, teachers)
        paths = write_report(table, out_dir)
        self.info(f"Report written to {paths['txt']}\n{render_report(table)}")


class ReportTask(Task):
    name = "report"
    help = "Render stored experiment reports as text tables and CSV"
    uses_config = False

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        parser.add_argument("reports", type=Path, nargs="+", help="report.json files written by ablate")
        parser.add_argument("--out", type=Path, help="Directory for merged report.{json,csv,txt}")
        parser.add_argument("--precision", type=int, default=1, help="Decimals in the text table (default: 1)")

    def run(self) -> None:
        tables = [load_report(p) for p in self.args.reports]
        if len(tables) == 1:
            table = tables[0]
        else:
            table = ReportTable(title=" + ".join(t.title for t in tables), rows=[r for t in tables for r in t.rows])
            if len({r.name for r in table.rows}) != len(table.rows):
                raise ContractError("Merged reports contain duplicate row names")
        print(render_report(table, self.args.precision), end="")
        if self.args.out is not None:
            paths = write_report(table, self.args.out)
            self.info(f"Report written to {paths['csv']} and {paths['txt']}")
