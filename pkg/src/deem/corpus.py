"""Stance-detection corpus ingestion.

Normalizes heterogeneous upstream dataset layouts into one canonical
representation: an :class:`Instance` is a sentence with one or more
(target, label) pairs and a train/test split tag.  The canonical
interchange file is UTF-8 JSONL with the keys ``id``, ``sentence``,
``targets``, ``labels`` (parallel to targets) and ``split``; adapter
readers translate the public datasets' CSV/TSV layouts into it.

Sentences and targets are whitespace-normalized at ingestion (internal
newlines and tab runs collapse to single spaces) so downstream prompt
templates stay line-oriented.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .ioutil import atomic_write_text, canonical_json


class CorpusError(Exception):
    """Base error for corpus loading and validation."""


class CorpusFormatError(CorpusError):
    """A row could not be parsed; carries the offending location."""

    def __init__(self, source: str, line: int | None, reason: str):
        self.source = source
        self.line = line
        self.reason = reason
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {reason}")


class UnknownLabelError(CorpusError):
    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"unknown stance label: {raw!r}")


class StanceLabel(Enum):
    FAVOR = "favor"
    AGAINST = "against"
    NEUTRAL = "neutral"
    NONE = "none"


_LABEL_SYNONYMS = {
    "favor": StanceLabel.FAVOR,
    "against": StanceLabel.AGAINST,
    "none": StanceLabel.NONE,
    "neutral": StanceLabel.NEUTRAL,
}


def parse_label(raw: str) -> StanceLabel:
    """Map a raw label string onto the fixed vocabulary, case-insensitively.

    Unknown labels raise rather than coerce: a silently mislabeled row would
    corrupt every accuracy statistic computed downstream.
    """
    key = raw.strip().lower()
    if key not in _LABEL_SYNONYMS:
        raise UnknownLabelError(raw)
    return _LABEL_SYNONYMS[key]


def _clean_text(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class Instance:
    """One sentence with its ordered (target, label) pairs."""

    id: str
    sentence: str
    stances: tuple[tuple[str, StanceLabel], ...]
    split: str

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(target for target, _ in self.stances)

    @property
    def labels(self) -> tuple[StanceLabel, ...]:
        return tuple(label for _, label in self.stances)


@dataclass(frozen=True)
class Corpus:
    name: str
    instances: tuple[Instance, ...]
    label_set: frozenset[StanceLabel]


def _validate(name: str, instances: list[Instance], source: str) -> Corpus:
    if not instances:
        raise CorpusFormatError(source, None, "no instances (empty corpus)")
    seen: set[str] = set()
    for inst in instances:
        if inst.id in seen:
            raise CorpusFormatError(source, None, f"duplicate instance id {inst.id!r}")
        seen.add(inst.id)
    label_set = frozenset(label for inst in instances for label in inst.labels)
    return Corpus(name=name, instances=tuple(instances), label_set=label_set)


def _instance_from_row(
    source: str,
    line: int,
    id_: str,
    sentence: str,
    targets: list[str],
    labels: list[str],
    split: str,
) -> Instance:
    if not id_:
        raise CorpusFormatError(source, line, "missing id")
    sentence = _clean_text(sentence)
    if not sentence:
        raise CorpusFormatError(source, line, "empty sentence")
    if not targets:
        raise CorpusFormatError(source, line, "instance has no targets")
    if len(targets) != len(labels):
        raise CorpusFormatError(
            source, line, f"{len(targets)} targets but {len(labels)} labels"
        )
    if split not in ("train", "test"):
        raise CorpusFormatError(source, line, f"split must be train or test, got {split!r}")
    try:
        stances = tuple(
            (_clean_text(target), parse_label(label))
            for target, label in zip(targets, labels)
        )
    except UnknownLabelError as exc:
        raise CorpusFormatError(source, line, str(exc)) from exc
    if any(not target for target, _ in stances):
        raise CorpusFormatError(source, line, "empty target")
    return Instance(id=id_, sentence=sentence, stances=stances, split=split)


# --- canonical JSONL format ---

def _read_canonical(path: Path, name: str) -> list[Instance]:
    instances: list[Instance] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(str(path), line_no, f"invalid JSON: {exc.msg}")
            if not isinstance(row, dict):
                raise CorpusFormatError(str(path), line_no, "row is not an object")
            missing = {"id", "sentence", "targets", "labels", "split"} - set(row)
            if missing:
                raise CorpusFormatError(
                    str(path), line_no, f"missing keys: {', '.join(sorted(missing))}"
                )
            instances.append(
                _instance_from_row(
                    str(path),
                    line_no,
                    str(row["id"]),
                    str(row["sentence"]),
                    [str(t) for t in row["targets"]],
                    [str(lbl) for lbl in row["labels"]],
                    str(row["split"]),
                )
            )
    return instances


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Serialize to the canonical JSONL layout (deterministic bytes)."""
    lines = []
    for inst in corpus.instances:
        lines.append(
            canonical_json(
                {
                    "id": inst.id,
                    "sentence": inst.sentence,
                    "targets": list(inst.targets),
                    "labels": [label.value for label in inst.labels],
                    "split": inst.split,
                }
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


# --- upstream dataset adapters ---
#
# Adapter formats read a directory: files whose names contain "train" feed the
# train split, files containing "test" feed the test split.  Header mapping per
# dataset:
#   pstance-csv : CSV columns Tweet, Target, Stance
#   semeval-tsv : TSV columns ID, Target, Tweet, Stance
#   mtsd-csv    : CSV columns Tweet, Target1, Stance1, Target2, Stance2

def _split_files(root: Path, suffixes: tuple[str, ...]) -> list[tuple[Path, str]]:
    if not root.is_dir():
        raise CorpusFormatError(str(root), None, "adapter formats expect a directory")
    found: list[tuple[Path, str]] = []
    for path in sorted(root.iterdir()):
        if path.suffix.lower() not in suffixes:
            continue
        lowered = path.name.lower()
        if "train" in lowered:
            found.append((path, "train"))
        elif "test" in lowered:
            found.append((path, "test"))
    if not found:
        raise CorpusFormatError(
            str(root), None, "no files matching *train*/*test* with expected suffix"
        )
    return found


def _header_index(header: list[str], wanted: list[str], source: str) -> dict[str, int]:
    lowered = [column.strip().lower() for column in header]
    index: dict[str, int] = {}
    for name in wanted:
        if name.lower() not in lowered:
            raise CorpusFormatError(source, 1, f"missing column {name!r} in header")
        index[name] = lowered.index(name.lower())
    return index


def _read_delimited(
    path: Path,
    split: str,
    delimiter: str,
    columns: list[str],
    row_to_fields,
) -> list[Instance]:
    instances: list[Instance] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise CorpusFormatError(str(path), 1, "empty file")
        index = _header_index(header, columns, str(path))
        for line_no, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise CorpusFormatError(
                    str(path), line_no, f"expected {len(header)} cells, got {len(row)}"
                )
            id_, sentence, targets, labels = row_to_fields(row, index, line_no)
            instances.append(
                _instance_from_row(str(path), line_no, id_, sentence, targets, labels, split)
            )
    return instances


def _read_pstance(root: Path, name: str) -> list[Instance]:
    columns = ["Tweet", "Target", "Stance"]

    instances: list[Instance] = []
    for path, split in _split_files(root, (".csv",)):
        def fields_for_file(row, index, line_no, _stem=path.stem):
            id_ = f"{_stem}-{line_no}"
            return id_, row[index["Tweet"]], [row[index["Target"]]], [row[index["Stance"]]]

        instances.extend(_read_delimited(path, split, ",", columns, fields_for_file))
    return instances


def _read_semeval(root: Path, name: str) -> list[Instance]:
    columns = ["ID", "Target", "Tweet", "Stance"]

    def fields(row, index, line_no):
        return (
            row[index["ID"]].strip(),
            row[index["Tweet"]],
            [row[index["Target"]]],
            [row[index["Stance"]]],
        )

    instances: list[Instance] = []
    for path, split in _split_files(root, (".txt", ".tsv")):
        instances.extend(_read_delimited(path, split, "\t", columns, fields))
    return instances


def _read_mtsd(root: Path, name: str) -> list[Instance]:
    columns = ["Tweet", "Target1", "Stance1", "Target2", "Stance2"]

    instances: list[Instance] = []
    for path, split in _split_files(root, (".csv",)):
        def fields_for_file(row, index, line_no, _stem=path.stem):
            return (
                f"{_stem}-{line_no}",
                row[index["Tweet"]],
                [row[index["Target1"]], row[index["Target2"]]],
                [row[index["Stance1"]], row[index["Stance2"]]],
            )

        instances.extend(_read_delimited(path, split, ",", columns, fields_for_file))
    return instances


_FORMATS = {
    "jsonl": None,  # canonical, handled directly
    "pstance-csv": _read_pstance,
    "semeval-tsv": _read_semeval,
    "mtsd-csv": _read_mtsd,
}


def load_corpus(path: str | Path, format: str = "jsonl", name: str | None = None) -> Corpus:
    """Load and validate a corpus.

    ``format`` selects the canonical JSONL reader or one of the dataset
    adapters documented above.  Malformed rows raise
    :class:`CorpusFormatError` with the file and line; they are never
    silently dropped.
    """
    if format not in _FORMATS:
        raise CorpusError(f"unknown corpus format {format!r}; expected one of {sorted(_FORMATS)}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus path does not exist: {path}")
    corpus_name = name or path.stem
    if format == "jsonl":
        instances = _read_canonical(path, corpus_name)
    else:
        instances = _FORMATS[format](path, corpus_name)
    return _validate(corpus_name, instances, str(path))


def split_view(corpus: Corpus, split: str) -> list[Instance]:
    """Instances of one split, in stable input order."""
    if split not in ("train", "test"):
        raise CorpusError(f"split must be train or test, got {split!r}")
    return [inst for inst in corpus.instances if inst.split == split]
