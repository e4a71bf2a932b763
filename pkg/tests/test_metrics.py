from functools import lru_cache
from pathlib import Path

import pytest
from deepdiff import DeepDiff
from hypothesis import given
from hypothesis import strategies as st

from utils.data_types.result_types import ErrorCounts, ReportTable, RunReport
from utils.errors import DataError
from utils.pipeline.metrics import edit_distance_counts, score_corpus, tokenize
from utils.pipeline.report import load_report, mean_std, render_report, report_csv, write_report


def minimal_edits(hyp: tuple, ref: tuple) -> int:
    @lru_cache(maxsize=None)
    def search(i: int, j: int) -> int:
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(
            search(i + 1, j + 1) + (ref[i] != hyp[j]),
            search(i, j + 1) + 1,
            search(i + 1, j) + 1,
        )

    return search(0, 0)


class TestEditDistance:
    def test_identical(self) -> None:
        counts = edit_distance_counts("the cat".split(), "the cat".split())
        assert counts.as_tuple() == (0, 0, 0, 2)
        assert counts.rate == 0.0

    def test_deletion(self) -> None:
        counts = edit_distance_counts("the cat".split(), "the cat sat".split())
        assert counts.as_tuple() == (0, 1, 0, 3)
        assert counts.rate == pytest.approx(1 / 3)

    def test_substitution_and_insertion(self) -> None:
        counts = edit_distance_counts(list("axcd"), list("abc"))
        assert counts.as_tuple() == (1, 0, 1, 3)
        assert counts.rate == pytest.approx(2 / 3)

    def test_substitution_preferred_on_ties(self) -> None:
        assert edit_distance_counts(["b"], ["a"]).as_tuple() == (1, 0, 0, 1)

    def test_empty_reference(self) -> None:
        counts = edit_distance_counts(["a", "b"], [])
        assert counts.as_tuple() == (0, 0, 2, 0)
        assert counts.rate is None

    @given(
        hyp=st.lists(st.sampled_from("abc"), max_size=5),
        ref=st.lists(st.sampled_from("abc"), max_size=5),
    )
    def test_matches_exhaustive_search(self, hyp: list[str], ref: list[str]) -> None:
        counts = edit_distance_counts(hyp, ref)
        assert counts.errors == minimal_edits(tuple(hyp), tuple(ref))
        assert counts.reference_length == len(ref)
        assert len(ref) - counts.deletions + counts.insertions == len(hyp)


class TestScoreCorpus:
    def test_pooled_rate(self) -> None:
        counts = score_corpus({"a": "xb", "b": "cd"}, {"a": "ab", "b": "cd"})
        assert counts.rate == pytest.approx(0.25)

    def test_order_does_not_matter(self) -> None:
        refs = {"u1": "ab cd", "u2": "efg", "u3": "h"}
        hyps = {"u1": "ab d", "u2": "", "u3": "hh"}
        reordered = {k: hyps[k] for k in reversed(list(hyps))}
        assert score_corpus(hyps, refs) == score_corpus(reordered, refs)

    def test_space_is_a_character(self) -> None:
        assert tokenize("ab cd", "char") == ["a", "b", " ", "c", "d"]
        assert tokenize(" ab  cd ", "word") == ["ab", "cd"]
        with pytest.raises(DataError):
            tokenize("ab", "phone")

    def test_empty_decode_is_all_deletions(self) -> None:
        assert score_corpus({"a": ""}, {"a": "abc"}).as_tuple() == (0, 3, 0, 3)

    def test_ids_must_align(self) -> None:
        with pytest.raises(DataError, match="missing=\\['b'\\]"):
            score_corpus({"a": "x"}, {"a": "x", "b": "y"})

    def test_counts_add(self) -> None:
        assert ErrorCounts(1, 0, 0, 2) + ErrorCounts(0, 1, 1, 3) == ErrorCounts(1, 1, 1, 5)


@pytest.fixture
def table() -> ReportTable:
    return ReportTable(
        title="Ablation study",
        rows=[
            RunReport("Full model", per_seed={0: 10.0, 1: 12.0, 2: 14.0}),
            RunReport("- Time masking", per_seed={0: 20.0, 2: 22.0}, failures={1: "NumericError: non-finite loss"}),
            RunReport("- Audio auxiliary task", failures={0: "teachers unavailable", 1: "teachers unavailable"}),
        ],
    )


class TestReports:
    def test_run_report_statistics(self, table: ReportTable) -> None:
        full = table.rows[0]
        assert full.mean == pytest.approx(12.0)
        assert full.std == pytest.approx(2.0)
        assert full.best == 10.0
        assert table.rows[2].mean is None and table.rows[2].std is None

    def test_mean_std_format(self) -> None:
        assert mean_std(12.0, 2.0) == "12.0±2.0"
        assert mean_std(12.346, None, 2) == "12.35"
        assert mean_std(None, None) == "-"

    def test_rendered_table(self, table: ReportTable) -> None:
        lines = render_report(table).splitlines()
        assert lines[0] == "Ablation study"
        assert "CER Mean±Std" in lines[1] and "Best" in lines[1]
        assert lines[3].startswith("Full model") and "12.0±2.0" in lines[3] and lines[3].endswith("3/3")
        assert lines[4].endswith("2/3")
        assert "Failed runs:" in lines
        assert "  - Time masking, seed 1: NumericError: non-finite loss" in lines

    def test_word_unit_header(self) -> None:
        table = ReportTable("Beam size", rows=[RunReport("beam 1", unit="word", per_seed={0: 30.0, 1: 32.0})])
        assert "WER Mean±Std" in render_report(table)

    def test_csv(self, table: ReportTable) -> None:
        lines = report_csv(table).splitlines()
        assert lines[0] == "name,unit,mean,std,best,seeds,failures"
        assert lines[1] == "Full model,char,12.0,2.0,10.0,0:10.0;1:12.0;2:14.0,"
        assert lines[3].startswith("- Audio auxiliary task,char,,,,,")

    def test_write_and_load(self, tmp_path: Path, table: ReportTable) -> None:
        paths = write_report(table, tmp_path / "out")
        assert sorted(paths) == ["csv", "json", "txt"]
        assert all(p.exists() for p in paths.values())
        loaded = load_report(paths["json"])
        assert DeepDiff(loaded.to_dict(), table.to_dict()) == {}

    def test_load_missing_report(self, tmp_path: Path) -> None:
        with pytest.raises(DataError):
            load_report(tmp_path / "report.json")
