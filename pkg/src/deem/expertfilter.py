"""Stage 2: keep the experienced experts.

Two heuristics computed over the stage-1 records decide who survives:

* occurrence count — how many records an expert appears in (duplicates
  within one record are collapsed before counting), and
* prediction accuracy — the fraction of an expert's records whose predicted
  label(s) match gold.

Experts below the accuracy threshold are discarded, the remainder is ranked
by count, and the top-k form the pool.  Each sentence keeps the intersection
of its own generated experts with the pool; sentences left empty fall back
to the pool's three most frequent experts.

Counting is exact: counts are integers and, under the fractional
multi-target rule, correctness accumulates as ``fractions.Fraction``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import fsum

from .corpus import Corpus, StanceLabel
from .expertgen import ExpertName, GenerationRecord


class FilterError(Exception):
    pass


class UnknownInstanceError(FilterError):
    pass


FALLBACK_SIZE = 3


@dataclass(frozen=True)
class ExpertStats:
    expert: ExpertName
    count: int
    correct: int | Fraction

    @property
    def acc(self) -> float:
        if self.count == 0:
            raise FilterError(f"accuracy undefined for zero-count expert {self.expert.canonical!r}")
        return float(self.correct) / self.count

    def to_dict(self, selected: bool | None = None) -> dict:
        correct: int | list[int]
        if isinstance(self.correct, Fraction) and self.correct.denominator != 1:
            correct = [self.correct.numerator, self.correct.denominator]
        else:
            correct = int(self.correct)
        row = {
            "canonical": self.expert.canonical,
            "display": self.expert.display,
            "count": self.count,
            "correct": correct,
            "acc": self.acc,
        }
        if selected is not None:
            row["selected"] = selected
        return row

    @classmethod
    def from_dict(cls, row: dict) -> "ExpertStats":
        raw = row["correct"]
        correct = Fraction(raw[0], raw[1]) if isinstance(raw, list) else int(raw)
        return cls(
            expert=ExpertName(canonical=row["canonical"], display=row["display"]),
            count=int(row["count"]),
            correct=correct,
        )


@dataclass
class ExpertPool:
    """The selected experts plus each sentence's filtered expert list."""

    experts: list[ExpertStats]  # selection order: count desc, acc desc, name asc
    acc_threshold: float
    top_k: int
    per_sentence: dict[str, list[ExpertName]]
    fallback_ids: frozenset[str] = field(default_factory=frozenset)

    def selected_names(self) -> list[ExpertName]:
        return [stats.expert for stats in self.experts]


def _dedup(experts: list[ExpertName]) -> list[ExpertName]:
    seen: set[str] = set()
    out: list[ExpertName] = []
    for expert in experts:
        if expert.canonical not in seen:
            seen.add(expert.canonical)
            out.append(expert)
    return out


def _record_correctness(
    record: GenerationRecord, gold: tuple[StanceLabel, ...], rule: str
) -> int | Fraction:
    predicted = tuple(record.predicted)
    if rule == "strict":
        return 1 if predicted == gold else 0
    if rule == "fractional":
        matches = sum(1 for pred, actual in zip(predicted, gold) if pred == actual)
        return Fraction(matches, len(gold))
    raise FilterError(f"unknown multi-target rule {rule!r}")


def compute_stats(
    records: list[GenerationRecord], corpus: Corpus, rule: str = "strict"
) -> list[ExpertStats]:
    """Tally occurrence count and correct-prediction count per expert.

    Only parse-ok records participate.  ``rule`` decides multi-target
    correctness: "strict" requires every target to match gold, "fractional"
    credits the matching share.  Output is sorted by canonical name.
    """
    gold = {inst.id: inst.labels for inst in corpus.instances}
    counts: dict[str, int] = {}
    corrects: dict[str, int | Fraction] = {}
    displays: dict[str, str] = {}
    for record in records:
        if not record.parse_ok:
            continue
        if record.instance_id not in gold:
            raise UnknownInstanceError(f"record references unknown instance {record.instance_id!r}")
        credit = _record_correctness(record, gold[record.instance_id], rule)
        for expert in _dedup(record.experts):
            key = expert.canonical
            counts[key] = counts.get(key, 0) + 1
            corrects[key] = corrects.get(key, 0) + credit
            displays.setdefault(key, expert.display)
    return [
        ExpertStats(
            expert=ExpertName(canonical=key, display=displays[key]),
            count=counts[key],
            correct=corrects[key],
        )
        for key in sorted(counts)
    ]


def experts_by_sentence(records: list[GenerationRecord]) -> dict[str, list[ExpertName]]:
    """Map instance id → that record's experts (parse-ok records only)."""
    return {
        record.instance_id: _dedup(record.experts)
        for record in records
        if record.parse_ok
    }


def selection_order(stats: ExpertStats) -> tuple:
    return (-stats.count, -stats.acc, stats.expert.canonical)


def filter_pool(
    stats: list[ExpertStats],
    per_sentence_experts: dict[str, list[ExpertName]],
    acc_threshold: float = 0.5,
    top_k: int = 20,
) -> ExpertPool:
    """Apply the accuracy threshold, then keep the top-k by count.

    Ties at the boundary break by (count desc, acc desc, canonical asc), so
    the pool is fully deterministic.  Sentences whose expert list does not
    intersect the pool fall back to the pool's three most frequent experts.
    """
    if not 0.0 <= acc_threshold <= 1.0:
        raise FilterError(f"acc_threshold must be in [0, 1], got {acc_threshold}")
    if top_k < 1:
        raise FilterError(f"top_k must be >= 1, got {top_k}")
    survivors = [s for s in stats if s.count > 0 and s.acc >= acc_threshold]
    ranked = sorted(survivors, key=selection_order)
    selected = ranked[:top_k]
    by_canonical = {s.expert.canonical: s.expert for s in selected}
    fallback = [s.expert for s in selected[:FALLBACK_SIZE]]

    per_sentence: dict[str, list[ExpertName]] = {}
    fallback_ids: set[str] = set()
    for instance_id, experts in per_sentence_experts.items():
        kept = [
            by_canonical[expert.canonical]
            for expert in _dedup(experts)
            if expert.canonical in by_canonical
        ]
        if not kept:
            kept = list(fallback)
            fallback_ids.add(instance_id)
        per_sentence[instance_id] = kept

    return ExpertPool(
        experts=selected,
        acc_threshold=acc_threshold,
        top_k=top_k,
        per_sentence=per_sentence,
        fallback_ids=frozenset(fallback_ids),
    )


@dataclass(frozen=True)
class SweepCell:
    acc_threshold: float
    top_k: int
    pool_size: int
    mean_acc: float
    coverage: float

    def to_dict(self) -> dict:
        return {
            "acc_threshold": self.acc_threshold,
            "top_k": self.top_k,
            "pool_size": self.pool_size,
            "mean_acc": self.mean_acc,
            "coverage": self.coverage,
        }


def sweep_thresholds(
    records: list[GenerationRecord],
    corpus: Corpus,
    thresholds: list[float],
    ks: list[int],
    rule: str = "strict",
) -> list[SweepCell]:
    """Pool summaries over a threshold × top-k grid.

    Coverage is the fraction of sentences whose own experts survived (i.e.
    did not need the fallback).
    """
    if not thresholds or not ks:
        raise FilterError("sweep grids must be non-empty")
    stats = compute_stats(records, corpus, rule=rule)
    per_sentence = experts_by_sentence(records)
    cells: list[SweepCell] = []
    for threshold in thresholds:
        for k in ks:
            pool = filter_pool(stats, per_sentence, acc_threshold=threshold, top_k=k)
            if pool.experts:
                mean_acc = fsum(s.acc for s in pool.experts) / len(pool.experts)
            else:
                mean_acc = 0.0
            if per_sentence:
                coverage = 1.0 - len(pool.fallback_ids) / len(per_sentence)
            else:
                coverage = 0.0
            cells.append(
                SweepCell(
                    acc_threshold=threshold,
                    top_k=k,
                    pool_size=len(pool.experts),
                    mean_acc=mean_acc,
                    coverage=coverage,
                )
            )
    return cells
