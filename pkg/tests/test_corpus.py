from __future__ import annotations

import json

import pytest

from deem.corpus import (
    Corpus,
    CorpusFormatError,
    StanceLabel,
    UnknownLabelError,
    load_corpus,
    parse_label,
    save_corpus,
    split_view,
)

from conftest import make_corpus, make_instance


def _write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(row) for row in rows) + "\n", encoding="utf-8")


def _row(id, sentence="a sentence", targets=("T",), labels=("favor",), split="train"):
    return {
        "id": id,
        "sentence": sentence,
        "targets": list(targets),
        "labels": list(labels),
        "split": split,
    }


class TestLabels:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("FAVOR", StanceLabel.FAVOR),
            ("favor", StanceLabel.FAVOR),
            ("Against", StanceLabel.AGAINST),
            ("NONE", StanceLabel.NONE),
            ("  neutral ", StanceLabel.NEUTRAL),
        ],
    )
    def test_synonyms_case_insensitive(self, raw, expected):
        assert parse_label(raw) is expected

    def test_unknown_label_hard_fails(self):
        with pytest.raises(UnknownLabelError):
            parse_label("supportive")


class TestLoad:
    def test_loads_canonical_jsonl(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(path, [_row("a"), _row("b", split="test")])
        corpus = load_corpus(path)
        assert len(corpus.instances) == 2
        assert corpus.instances[0].labels == (StanceLabel.FAVOR,)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "nope.jsonl")

    def test_empty_file_is_malformed(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="no instances"):
            load_corpus(path)

    def test_malformed_row_reports_line_and_reason(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            json.dumps(_row("a")) + "\n" + "{not json\n", encoding="utf-8"
        )
        with pytest.raises(CorpusFormatError) as excinfo:
            load_corpus(path)
        assert excinfo.value.line == 2
        assert "JSON" in excinfo.value.reason

    def test_unknown_label_rejected_with_line(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(path, [_row("a"), _row("b", labels=("maybe",))])
        with pytest.raises(CorpusFormatError) as excinfo:
            load_corpus(path)
        assert excinfo.value.line == 2

    def test_parallel_lists_enforced(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(path, [_row("a", targets=("T1", "T2"), labels=("favor",))])
        with pytest.raises(CorpusFormatError, match="2 targets but 1 labels"):
            load_corpus(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(path, [_row("a"), _row("a")])
        with pytest.raises(CorpusFormatError, match="duplicate"):
            load_corpus(path)

    def test_sentence_whitespace_normalized(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(path, [_row("a", sentence="line one\nline\ttwo   spaced")])
        corpus = load_corpus(path)
        assert corpus.instances[0].sentence == "line one line two spaced"

    def test_multi_target_instance(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(path, [_row("a", targets=("T1", "T2"), labels=("favor", "against"))])
        corpus = load_corpus(path)
        assert corpus.instances[0].stances == (
            ("T1", StanceLabel.FAVOR),
            ("T2", StanceLabel.AGAINST),
        )

    def test_label_set_is_observed_union(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(path, [_row("a"), _row("b", labels=("neutral",))])
        corpus = load_corpus(path)
        assert corpus.label_set == frozenset({StanceLabel.FAVOR, StanceLabel.NEUTRAL})


class TestToyFixture:
    def test_bundled_toy_corpus_counts(self, toy_corpus):
        assert len(toy_corpus.instances) == 60
        assert len({t for inst in toy_corpus.instances for t in inst.targets}) == 2

    def test_toy_split_counts(self, toy_corpus):
        assert len(split_view(toy_corpus, "train")) == 40
        assert len(split_view(toy_corpus, "test")) == 20


class TestSplitView:
    def test_returns_stable_order(self, toy_corpus):
        train = split_view(toy_corpus, "train")
        assert [inst.id for inst in train] == sorted(
            [inst.id for inst in train]
        )  # toy ids were assigned in input order

    def test_empty_split(self):
        corpus = make_corpus([make_instance("a", split="train")])
        assert split_view(corpus, "test") == []

    def test_split_partition(self, toy_corpus):
        assert len(split_view(toy_corpus, "train")) + len(
            split_view(toy_corpus, "test")
        ) == len(toy_corpus.instances)


class TestRoundTrip:
    def test_save_load_identity(self, toy_corpus, tmp_path):
        path = tmp_path / "roundtrip.jsonl"
        save_corpus(toy_corpus, path)
        again = load_corpus(path, name=toy_corpus.name)
        assert again == toy_corpus

    def test_equal_bytes_give_equal_sequences(self, tmp_path):
        rows = [_row("a"), _row("b", split="test"), _row("c", labels=("against",))]
        path1, path2 = tmp_path / "c1.jsonl", tmp_path / "c2.jsonl"
        _write_jsonl(path1, rows)
        _write_jsonl(path2, rows)
        assert load_corpus(path1, name="x") == load_corpus(path2, name="x")


class TestAdapters:
    def test_pstance_adapter(self, tmp_path):
        root = tmp_path / "pstance"
        root.mkdir()
        (root / "raw_train_trump.csv").write_text(
            "Tweet,Target,Stance\n"
            '"tweet one",Donald Trump,FAVOR\n'
            '"tweet two",Donald Trump,AGAINST\n',
            encoding="utf-8",
        )
        (root / "raw_test_trump.csv").write_text(
            "Tweet,Target,Stance\n" '"tweet three",Donald Trump,NONE\n', encoding="utf-8"
        )
        corpus = load_corpus(root, format="pstance-csv", name="pstance-trump")
        assert len(split_view(corpus, "train")) == 2
        assert len(split_view(corpus, "test")) == 1
        assert corpus.instances[0].targets == ("Donald Trump",)

    def test_semeval_adapter(self, tmp_path):
        root = tmp_path / "semeval"
        root.mkdir()
        (root / "trainingdata.txt").write_text(
            "ID\tTarget\tTweet\tStance\n"
            "101\tHillary Clinton\tsome tweet\tAGAINST\n",
            encoding="utf-8",
        )
        (root / "testdata.txt").write_text(
            "ID\tTarget\tTweet\tStance\n"
            "201\tHillary Clinton\tother tweet\tFAVOR\n",
            encoding="utf-8",
        )
        corpus = load_corpus(root, format="semeval-tsv")
        assert [inst.id for inst in corpus.instances] == ["201", "101"] or [
            inst.id for inst in corpus.instances
        ] == ["101", "201"]
        assert {inst.split for inst in corpus.instances} == {"train", "test"}

    def test_mtsd_adapter_two_stances_per_instance(self, tmp_path):
        root = tmp_path / "mtsd"
        root.mkdir()
        (root / "train.csv").write_text(
            "Tweet,Target1,Stance1,Target2,Stance2\n"
            '"both of them",Trump,FAVOR,Clinton,AGAINST\n',
            encoding="utf-8",
        )
        corpus = load_corpus(root, format="mtsd-csv")
        inst = corpus.instances[0]
        assert inst.stances == (
            ("Trump", StanceLabel.FAVOR),
            ("Clinton", StanceLabel.AGAINST),
        )

    def test_adapter_rejects_missing_column(self, tmp_path):
        root = tmp_path / "pstance"
        root.mkdir()
        (root / "train.csv").write_text("Text,Target,Stance\nx,T,FAVOR\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="Tweet"):
            load_corpus(root, format="pstance-csv")
