"""Stage 1: prompt a completion model to propose experts per train sentence.

A handful of held-out train instances become demonstrations whose expert
lists are manually written; every other train instance is completed by the
model, and the response is parsed back into candidate expert names plus a
predicted stance.  The demonstration's own line format doubles as the
response-format specification, with a tolerant fallback for drift.

Expert names are aggressively canonicalized (case, punctuation, trailing
"expert" role words) so that surface variants pool into one count.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .backend import BackendError, CompletionClient, CompletionRequest
from .corpus import Corpus, Instance, StanceLabel, split_view
from .ioutil import append_jsonl, read_jsonl, write_jsonl

log = logging.getLogger(__name__)


class PromptError(Exception):
    pass


_NON_ALNUM_RE = re.compile(r"[^0-9a-z\s]+")


def canonical_expert_name(raw: str) -> str:
    """Normalize an expert name for counting: lowercase, strip punctuation,
    collapse whitespace, drop trailing "expert" role words.

    Returns "" for strings with no usable content.  Idempotent.
    """
    text = _NON_ALNUM_RE.sub(" ", raw.lower())
    words = text.split()
    if not words:
        return ""
    while len(words) > 1 and words[-1] == "expert":
        words.pop()
    return " ".join(words)


@dataclass(frozen=True, eq=False)
class ExpertName:
    """An expert persona; equality and hashing use the canonical form only."""

    canonical: str
    display: str

    @classmethod
    def from_raw(cls, raw: str) -> "ExpertName | None":
        canonical = canonical_expert_name(raw)
        if not canonical:
            return None
        return cls(canonical=canonical, display=" ".join(raw.split()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExpertName):
            return NotImplemented
        return self.canonical == other.canonical

    def __hash__(self) -> int:
        return hash(self.canonical)

    def to_dict(self) -> dict:
        return {"canonical": self.canonical, "display": self.display}

    @classmethod
    def from_dict(cls, data: dict) -> "ExpertName":
        return cls(canonical=data["canonical"], display=data["display"])


@dataclass(frozen=True)
class DemonstrationSpec:
    """A held-out instance with manually written experts and, for the
    inference stage, a short scripted discussion."""

    instance: Instance
    experts: tuple[ExpertName, ...]
    discussion: str | None = None


@dataclass
class GenerationRecord:
    instance_id: str
    experts: list[ExpertName]
    predicted: list[StanceLabel]
    raw_response: str
    parse_ok: bool
    error: str | None = None

    def to_dict(self) -> dict:
        row = {
            "instance_id": self.instance_id,
            "experts": [expert.to_dict() for expert in self.experts],
            "predicted": [label.value for label in self.predicted],
            "raw_response": self.raw_response,
            "parse_ok": self.parse_ok,
        }
        if self.error is not None:
            row["error"] = self.error
        return row

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRecord":
        return cls(
            instance_id=data["instance_id"],
            experts=[ExpertName.from_dict(expert) for expert in data["experts"]],
            predicted=[StanceLabel(value) for value in data["predicted"]],
            raw_response=data["raw_response"],
            parse_ok=data["parse_ok"],
            error=data.get("error"),
        )


# --- prompt rendering ---

def _stance_block(
    instance: Instance,
    experts: tuple[ExpertName, ...] | None,
    include_labels: bool,
) -> str:
    """One template block; an open block stops right after ``Experts:``."""
    lines = [f"Sentence: {instance.sentence}"]
    for target in instance.targets:
        lines.append(f"Target: {target}")
    if experts is None:
        lines.append("Experts:")
        return "\n".join(lines)
    lines.append("Experts: " + "; ".join(expert.display for expert in experts))
    if include_labels:
        for label in instance.labels:
            lines.append(f"Stance: {label.value.upper()}")
    return "\n".join(lines)


def render_stage1_prompt(
    demos: list[DemonstrationSpec], query: Instance, d: int | None = None
) -> str:
    """Concatenate demonstration blocks and the open query block.

    Deterministic; the final block ends immediately after ``Experts:`` so the
    completion supplies the expert list and stance line(s).
    """
    if d is not None and len(demos) != d:
        raise PromptError(f"demo count mismatch: expected {d}, got {len(demos)}")
    if any(demo.instance.id == query.id for demo in demos):
        raise PromptError(f"query {query.id!r} appears among the demonstrations")
    blocks = [_stance_block(demo.instance, demo.experts, include_labels=True) for demo in demos]
    blocks.append(_stance_block(query, None, include_labels=False))
    return "\n\n".join(blocks)


# --- response parsing ---

_LABEL_WORD_RE = re.compile(r"\b(favor|against|neutral|none)\b", re.IGNORECASE)
_EXPERTS_LINE_RE = re.compile(r"^\s*experts?\s*:\s*(.*)$", re.IGNORECASE)
_STANCE_LINE_RE = re.compile(r"^\s*(?:final\s+)?stance\s*:\s*(.*)$", re.IGNORECASE)

MAX_EXPERTS_PER_RECORD = 6


def _first_label(text: str) -> StanceLabel | None:
    match = _LABEL_WORD_RE.search(text)
    if match is None:
        return None
    return StanceLabel(match.group(1).lower())


def _last_label(text: str) -> StanceLabel | None:
    matches = _LABEL_WORD_RE.findall(text)
    if not matches:
        return None
    return StanceLabel(matches[-1].lower())


def _dedup_experts(experts: list[ExpertName]) -> list[ExpertName]:
    seen: set[str] = set()
    unique: list[ExpertName] = []
    for expert in experts:
        if expert.canonical not in seen:
            seen.add(expert.canonical)
            unique.append(expert)
    return unique


def parse_stage1_response(
    raw: str, n_targets: int
) -> tuple[list[ExpertName], list[StanceLabel], bool]:
    """Extract expert names and stance labels from a completion.

    Primary parse reads the first ``Experts:`` line (semicolon-separated)
    and the ``Stance:`` lines; if fewer labels than targets are found, the
    fallback takes the last label synonym anywhere in the text and applies
    it to every target.  ``parse_ok`` is False only when no label is found.
    """
    experts: list[ExpertName] = []
    labels: list[StanceLabel] = []
    for line in raw.splitlines():
        experts_match = _EXPERTS_LINE_RE.match(line)
        if experts_match and not experts:
            for chunk in experts_match.group(1).split(";"):
                name = ExpertName.from_raw(chunk)
                if name is not None:
                    experts.append(name)
            continue
        stance_match = _STANCE_LINE_RE.match(line)
        if stance_match:
            label = _first_label(stance_match.group(1))
            if label is not None:
                labels.append(label)
    experts = _dedup_experts(experts)[:MAX_EXPERTS_PER_RECORD]
    if len(labels) >= n_targets:
        return experts, labels[:n_targets], True
    fallback = _last_label(raw)
    if fallback is not None:
        return experts, [fallback] * n_targets, True
    return experts, [], False


# --- demonstration selection ---

def select_demonstrations(
    corpus: Corpus,
    d: int,
    experts: list[ExpertName],
    discussions: dict[str, str] | None = None,
    mode: str = "first-distinct",
    seed: int = 0,
) -> list[DemonstrationSpec]:
    """Choose ``d`` held-out train instances as demonstrations.

    The default "first-distinct" walk picks the earliest train instance of
    each not-yet-seen label, then fills from the remaining instances in
    order — no randomness.  With ``mode="random"`` the choice is drawn from
    ``random.Random(seed)``.
    """
    train = split_view(corpus, "train")
    if d > len(train):
        raise PromptError(f"requested {d} demonstrations but train split has {len(train)}")
    if d == 0:
        return []
    if mode == "first-distinct":
        chosen: list[Instance] = []
        seen_labels: set[StanceLabel] = set()
        for inst in train:
            first_label = inst.labels[0]
            if first_label not in seen_labels:
                chosen.append(inst)
                seen_labels.add(first_label)
            if len(chosen) == d:
                break
        if len(chosen) < d:
            chosen_ids = {inst.id for inst in chosen}
            for inst in train:
                if inst.id not in chosen_ids:
                    chosen.append(inst)
                if len(chosen) == d:
                    break
    elif mode == "random":
        import random

        chosen = random.Random(seed).sample(train, d)
    else:
        raise PromptError(f"unknown demo selection mode {mode!r}")
    specs = []
    for inst in chosen:
        discussion = None
        if discussions:
            discussion = discussions.get(inst.labels[0].value)
        specs.append(
            DemonstrationSpec(instance=inst, experts=tuple(experts), discussion=discussion)
        )
    return specs


# --- the generation run ---

@dataclass
class Stage1Result:
    records: list[GenerationRecord]
    generated: int
    resumed: int
    parse_failures: int
    backend_failures: int


def generate_records(
    corpus: Corpus,
    demos: list[DemonstrationSpec],
    client: CompletionClient,
    *,
    model_id: str,
    d: int,
    max_tokens: int = 256,
    parallelism: int = 1,
    records_path: str | Path | None = None,
    meta: dict | None = None,
    chunk_size: int = 32,
) -> Stage1Result:
    """Generate one record per non-demonstration train instance.

    All requests run at temperature 0.  When ``records_path`` is given the
    file is written incrementally (append-only) and an existing file resumes
    the run: instances already recorded are skipped, so a rerun against a
    complete file touches neither the backend nor the bytes on disk.
    """
    if len(demos) != d:
        raise PromptError(f"demo count mismatch: expected {d}, got {len(demos)}")
    demo_ids = {demo.instance.id for demo in demos}
    queries = [inst for inst in split_view(corpus, "train") if inst.id not in demo_ids]

    existing: dict[str, GenerationRecord] = {}
    if records_path is not None and Path(records_path).exists():
        existing_meta, rows = read_jsonl(records_path)
        if meta is not None and existing_meta != meta:
            # Stale file from a different configuration: start over rather
            # than resume into a mixed artifact.
            log.info("records file has a different config fingerprint; regenerating")
            write_jsonl(records_path, [], meta=meta)
        else:
            for row in rows:
                record = GenerationRecord.from_dict(row)
                existing[record.instance_id] = record
    elif records_path is not None:
        write_jsonl(records_path, [], meta=meta)

    todo = [inst for inst in queries if inst.id not in existing]
    new_records: dict[str, GenerationRecord] = {}
    parse_failures = 0
    backend_failures = 0

    for start in range(0, len(todo), chunk_size):
        chunk = todo[start : start + chunk_size]
        requests = [
            CompletionRequest(
                model_id=model_id,
                prompt=render_stage1_prompt(demos, inst, d=d),
                temperature=0.0,
                sample_index=0,
                max_tokens=max_tokens,
            )
            for inst in chunk
        ]
        results = client.complete_batch(requests, parallelism=parallelism)
        chunk_records: list[GenerationRecord] = []
        for inst, result in zip(chunk, results):
            if isinstance(result, BackendError):
                backend_failures += 1
                record = GenerationRecord(
                    instance_id=inst.id,
                    experts=[],
                    predicted=[],
                    raw_response="",
                    parse_ok=False,
                    error=str(result),
                )
            else:
                experts, labels, ok = parse_stage1_response(result.text, len(inst.targets))
                # The record-level flag is stricter than the parser's: a
                # record without experts contributes nothing to the expert
                # statistics, so it is marked unparsed even when a label
                # was recovered.
                record_ok = ok and bool(experts) and len(labels) == len(inst.targets)
                if not record_ok:
                    parse_failures += 1
                record = GenerationRecord(
                    instance_id=inst.id,
                    experts=experts,
                    predicted=labels if record_ok else [],
                    raw_response=result.text,
                    parse_ok=record_ok,
                )
            chunk_records.append(record)
            new_records[inst.id] = record
        if records_path is not None:
            append_jsonl(records_path, (record.to_dict() for record in chunk_records))

    records = [existing.get(inst.id) or new_records[inst.id] for inst in queries]
    return Stage1Result(
        records=records,
        generated=len(new_records),
        resumed=len(existing),
        parse_failures=parse_failures,
        backend_failures=backend_failures,
    )
