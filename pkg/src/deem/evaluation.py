"""Scoring: per-target F1 on favor/against, pair aggregation, neutral bias.

The headline metric per target is the mean of the one-vs-rest F1 scores for
the favor and against labels.  Multi-target instances are scored per target
position and the pair's score is the macro average of the two targets.
Unparsed predictions (``None`` labels) count as wrong for every label: they
add a false negative to the gold class and a true/false positive to none.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import Corpus, StanceLabel, split_view
from .inference import Prediction


class EvalError(Exception):
    pass


class MissingPredictionError(EvalError):
    pass


class EmptySubsetError(EvalError):
    pass


PredLabel = StanceLabel | None


def confusion_counts(
    golds: Sequence[StanceLabel], preds: Sequence[PredLabel], label: StanceLabel
) -> tuple[int, int, int]:
    """(tp, fp, fn) treating ``label`` as the positive class."""
    tp = fp = fn = 0
    for gold, pred in zip(golds, preds):
        if gold == label and pred == label:
            tp += 1
        elif gold == label:
            fn += 1
        elif pred == label:
            fp += 1
    return tp, fp, fn


def f1_for_label(
    golds: Sequence[StanceLabel], preds: Sequence[PredLabel], label: StanceLabel
) -> float:
    tp, fp, fn = confusion_counts(golds, preds, label)
    denominator = 2 * tp + fp + fn
    if denominator == 0:
        return 0.0
    return 2 * tp / denominator


def f1_avg(
    golds: Sequence[StanceLabel], preds: Sequence[PredLabel]
) -> tuple[float, float, float]:
    """(f1_favor, f1_against, their mean) over parallel label vectors."""
    if len(golds) != len(preds):
        raise EvalError(f"length mismatch: {len(golds)} golds vs {len(preds)} preds")
    if not golds:
        raise EvalError("cannot score empty label vectors")
    favor = f1_for_label(golds, preds, StanceLabel.FAVOR)
    against = f1_for_label(golds, preds, StanceLabel.AGAINST)
    return favor, against, (favor + against) / 2


@dataclass
class NeutralMetrics:
    recall_neutral: float
    f1_neutral: float
    n_neutral: int

    def to_dict(self) -> dict:
        return {
            "recall_neutral": self.recall_neutral,
            "f1_neutral": self.f1_neutral,
            "n_neutral": self.n_neutral,
        }


@dataclass
class EvalReport:
    dataset: str
    target: str
    n: int
    f1_favor: float
    f1_against: float
    f1_avg: float
    parse_failures: int
    config_fingerprint: str = ""
    neutral: NeutralMetrics | None = None

    def to_dict(self) -> dict:
        row = {
            "dataset": self.dataset,
            "target": self.target,
            "n": self.n,
            "f1_favor": self.f1_favor,
            "f1_against": self.f1_against,
            "f1_avg": self.f1_avg,
            "parse_failures": self.parse_failures,
            "config_fingerprint": self.config_fingerprint,
        }
        if self.neutral is not None:
            row["neutral"] = self.neutral.to_dict()
        return row


def _group_pairs(
    instances, predictions_by_id
) -> dict[tuple[str, ...], list[tuple]]:
    groups: dict[tuple[str, ...], list[tuple]] = {}
    for inst in instances:
        prediction = predictions_by_id.get(inst.id)
        if prediction is None:
            raise MissingPredictionError(f"no prediction for test instance {inst.id!r}")
        groups.setdefault(inst.targets, []).append((inst, prediction))
    return groups


def _neutral_for(golds, preds) -> NeutralMetrics | None:
    neutral_indices = [i for i, gold in enumerate(golds) if gold == StanceLabel.NEUTRAL]
    if not neutral_indices:
        return None
    hits = sum(1 for i in neutral_indices if preds[i] == StanceLabel.NEUTRAL)
    recall = hits / len(neutral_indices)
    # One-vs-rest F1 needs the non-neutral rest, so it is computed over the
    # full vector rather than the neutral subset.
    f1 = f1_for_label(golds, preds, StanceLabel.NEUTRAL)
    return NeutralMetrics(recall_neutral=recall, f1_neutral=f1, n_neutral=len(neutral_indices))


def evaluate_run(
    corpus: Corpus,
    predictions: list[Prediction],
    config_fingerprint: str = "",
) -> list[EvalReport]:
    """One report per target (or target pair) over the test split.

    Pair scores macro-average the two target positions.  Every test instance
    must have a prediction; sentinel predictions are admitted and simply
    score as wrong.
    """
    predictions_by_id = {prediction.instance_id: prediction for prediction in predictions}
    groups = _group_pairs(split_view(corpus, "test"), predictions_by_id)
    reports: list[EvalReport] = []
    for targets in sorted(groups):
        members = groups[targets]
        n_positions = len(targets)
        favor_parts: list[float] = []
        against_parts: list[float] = []
        all_golds: list[StanceLabel] = []
        all_preds: list[PredLabel] = []
        for position in range(n_positions):
            golds = [inst.labels[position] for inst, _ in members]
            preds = [
                prediction.labels[position] if position < len(prediction.labels) else None
                for _, prediction in members
            ]
            favor, against, _ = f1_avg(golds, preds)
            favor_parts.append(favor)
            against_parts.append(against)
            all_golds.extend(golds)
            all_preds.extend(preds)
        f1_favor = sum(favor_parts) / n_positions
        f1_against = sum(against_parts) / n_positions
        reports.append(
            EvalReport(
                dataset=corpus.name,
                target="-".join(targets),
                n=len(members),
                f1_favor=f1_favor,
                f1_against=f1_against,
                f1_avg=(f1_favor + f1_against) / 2,
                parse_failures=sum(1 for _, prediction in members if not prediction.parse_ok),
                config_fingerprint=config_fingerprint,
                neutral=_neutral_for(all_golds, all_preds),
            )
        )
    return reports


def bias_subset_report(corpus: Corpus, predictions: list[Prediction]) -> NeutralMetrics:
    """Neutral-label metrics over the whole test split.

    Recall is measured on the gold-neutral subset; the one-vs-rest F1 uses
    every (gold, pred) pair so false positives are observable.
    """
    if StanceLabel.NEUTRAL not in corpus.label_set:
        raise EvalError("corpus label set does not include neutral")
    predictions_by_id = {prediction.instance_id: prediction for prediction in predictions}
    golds: list[StanceLabel] = []
    preds: list[PredLabel] = []
    for inst in split_view(corpus, "test"):
        prediction = predictions_by_id.get(inst.id)
        if prediction is None:
            raise MissingPredictionError(f"no prediction for test instance {inst.id!r}")
        for position in range(len(inst.targets)):
            golds.append(inst.labels[position])
            preds.append(
                prediction.labels[position] if position < len(prediction.labels) else None
            )
    metrics = _neutral_for(golds, preds)
    if metrics is None:
        raise EmptySubsetError("test split has no gold-neutral stances")
    return metrics


def format_report_table(reports: list[EvalReport]) -> str:
    """Human-readable fixed-width table (deterministic bytes)."""
    header = f"{'target':24} {'n':>5} {'f1_favor':>9} {'f1_against':>11} {'f1_avg':>7} {'parse_fail':>10}"
    lines = [header, "-" * len(header)]
    for report in reports:
        lines.append(
            f"{report.target:24} {report.n:>5} {report.f1_favor:>9.4f} "
            f"{report.f1_against:>11.4f} {report.f1_avg:>7.4f} {report.parse_failures:>10}"
        )
    return "\n".join(lines) + "\n"
