"""Stage 3b: multi-expert discussion prompts and the prediction loop.

The default mode retrieves experienced experts for each test sentence and
renders a few-shot prompt whose demonstrations carry scripted expert
discussions; the completion supplies the query's discussion and a
``Final Stance:`` line per target.  Ablation modes swap the expert source
(fixed top/bottom experts, anonymized roles) or drop experts entirely
(plain few-shot, optionally with self-consistency sampling and a majority
vote).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .backend import BackendError, CompletionClient, CompletionRequest
from .corpus import Instance, StanceLabel
from .expertfilter import ExpertPool, ExpertStats
from .expertgen import (
    DemonstrationSpec,
    ExpertName,
    PromptError,
    _LABEL_WORD_RE,
    _last_label,
)
from .repository import Repository, retrieve_experts

MODES = ("deem", "few_shot", "fixed_experts", "anonymized", "self_consistency")

# Deterministic tie-break for majority votes, most severe first.
TIE_ORDER = (StanceLabel.AGAINST, StanceLabel.FAVOR, StanceLabel.NEUTRAL, StanceLabel.NONE)


class InferenceError(Exception):
    pass


@dataclass
class InferenceConfig:
    d: int = 2
    h: int = 3
    turns: int = 1
    mode: str = "deem"
    temperature: float = 0.0
    max_tokens: int = 512
    # fixed_experts mode
    fixed_rank: str = "top3"  # top3 | bottom3
    fixed_by: str = "frequency"  # frequency | accuracy
    # anonymized mode
    anonymized_style: str = "expert_abc"  # expert_abc | person_abc
    # self_consistency mode; n=1 degenerates to a single plain sample
    sc_samples: int = 3
    sc_temperature: float = 0.7
    h_unit: str = "experts"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InferenceError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.d < 0:
            raise InferenceError("d must be >= 0")
        if self.h < 1:
            raise InferenceError("h must be >= 1")
        if self.turns < 1:
            raise InferenceError("turns must be >= 1")
        if self.mode == "self_consistency":
            if self.sc_samples < 1:
                raise InferenceError("self_consistency needs at least one sample")
            if self.sc_samples >= 2 and self.sc_temperature <= 0:
                raise InferenceError("self_consistency with n >= 2 requires temperature > 0")
        elif self.temperature != 0:
            raise InferenceError(f"mode {self.mode!r} must run at temperature 0")
        if self.fixed_rank not in ("top3", "bottom3"):
            raise InferenceError(f"fixed_rank must be top3 or bottom3, got {self.fixed_rank!r}")
        if self.fixed_by not in ("frequency", "accuracy"):
            raise InferenceError(f"fixed_by must be frequency or accuracy, got {self.fixed_by!r}")
        if self.anonymized_style not in ("expert_abc", "person_abc"):
            raise InferenceError(f"unknown anonymized_style {self.anonymized_style!r}")


@dataclass
class Prediction:
    instance_id: str
    labels: list[StanceLabel | None]
    discussion: str
    experts_used: list[ExpertName]
    samples: list[str]
    parse_ok: bool
    error: str | None = None

    def to_dict(self) -> dict:
        row = {
            "instance_id": self.instance_id,
            "labels": [label.value if label is not None else None for label in self.labels],
            "discussion": self.discussion,
            "experts_used": [expert.to_dict() for expert in self.experts_used],
            "samples": self.samples,
            "parse_ok": self.parse_ok,
        }
        if self.error is not None:
            row["error"] = self.error
        return row

    @classmethod
    def from_dict(cls, row: dict) -> "Prediction":
        return cls(
            instance_id=row["instance_id"],
            labels=[StanceLabel(value) if value is not None else None for value in row["labels"]],
            discussion=row["discussion"],
            experts_used=[ExpertName.from_dict(expert) for expert in row["experts_used"]],
            samples=row["samples"],
            parse_ok=row["parse_ok"],
            error=row.get("error"),
        )


# --- prompt rendering ---

def _discussion_marker(turns: int) -> str:
    return f"Discussion ({turns} round):" if turns == 1 else f"Discussion ({turns} rounds):"


def _expert_block(
    instance: Instance,
    experts: list[ExpertName],
    turns: int,
    discussion: str | None,
    labels_open: bool,
) -> str:
    lines = [f"Sentence: {instance.sentence}"]
    for target in instance.targets:
        lines.append(f"Target: {target}")
    lines.append("Experts: " + "; ".join(expert.display for expert in experts))
    lines.append(_discussion_marker(turns))
    if labels_open:
        return "\n".join(lines)
    if discussion:
        lines.append(discussion)
    for label in instance.labels:
        lines.append(f"Final Stance: {label.value.upper()}")
    return "\n".join(lines)


def _plain_block(instance: Instance, labels_open: bool) -> str:
    lines = [f"Sentence: {instance.sentence}"]
    for target in instance.targets:
        lines.append(f"Target: {target}")
    if labels_open:
        lines.append("Stance:")
        return "\n".join(lines)
    for label in instance.labels:
        lines.append(f"Stance: {label.value.upper()}")
    return "\n".join(lines)


def render_inference_prompt(
    demos: list[DemonstrationSpec],
    query: Instance,
    experts: list[ExpertName],
    turns: int = 1,
    d: int | None = None,
    few_shot: bool = False,
) -> str:
    """Render the stage-3 prompt.

    Expert mode blocks carry the expert list, a scripted discussion, and one
    ``Final Stance:`` line per target; the query block stops after the open
    discussion marker.  ``few_shot=True`` drops experts and discussions and
    leaves a bare ``Stance:`` slot instead.
    """
    if d is not None and len(demos) != d:
        raise PromptError(f"demo count mismatch: expected {d}, got {len(demos)}")
    if any(demo.instance.id == query.id for demo in demos):
        raise PromptError(f"query {query.id!r} appears among the demonstrations")
    if few_shot:
        blocks = [_plain_block(demo.instance, labels_open=False) for demo in demos]
        blocks.append(_plain_block(query, labels_open=True))
        return "\n\n".join(blocks)
    if not experts:
        raise PromptError("expert-mode prompts need a non-empty expert list")
    blocks = [
        _expert_block(
            demo.instance,
            list(demo.experts),
            turns,
            demo.discussion or "",
            labels_open=False,
        )
        for demo in demos
    ]
    blocks.append(_expert_block(query, experts, turns, None, labels_open=True))
    return "\n\n".join(blocks)


# --- response parsing ---

_FINAL_STANCE_RE = re.compile(r"^\s*final\s+stance\s*:\s*(.*)$", re.IGNORECASE)
_BARE_STANCE_RE = re.compile(r"^\s*stance\s*:\s*(.*)$", re.IGNORECASE)


def parse_inference_response(
    raw: str, n_targets: int
) -> tuple[list[StanceLabel], str, bool]:
    """Extract per-target labels and the discussion text from a completion.

    ``Final Stance:`` lines are the primary marker, bare ``Stance:`` lines
    the secondary; failing both, the last label synonym anywhere in the text
    is applied to every target.  Returns ``([], raw, False)`` when no label
    is found at all.
    """
    final_labels: list[StanceLabel] = []
    bare_labels: list[StanceLabel] = []
    first_marker_pos: int | None = None
    offset = 0
    for line in raw.splitlines(keepends=True):
        stripped = line.rstrip("\n")
        match = _FINAL_STANCE_RE.match(stripped)
        bare = _BARE_STANCE_RE.match(stripped) if match is None else None
        for pattern_match, bucket in ((match, final_labels), (bare, bare_labels)):
            if pattern_match is None:
                continue
            word = _LABEL_WORD_RE.search(pattern_match.group(1))
            if word is not None:
                bucket.append(StanceLabel(word.group(1).lower()))
                if bucket is final_labels and first_marker_pos is None:
                    first_marker_pos = offset
        offset += len(line)
    labels = final_labels if len(final_labels) >= n_targets else bare_labels
    discussion = raw[:first_marker_pos].strip() if first_marker_pos is not None else raw.strip()
    if len(labels) >= n_targets:
        return labels[:n_targets], discussion, True
    fallback = _last_label(raw)
    if fallback is not None:
        return [fallback] * n_targets, discussion, True
    return [], raw.strip(), False


def majority_vote(labels: list[StanceLabel]) -> StanceLabel:
    """Most frequent label; ties break by the fixed priority order."""
    if not labels:
        raise InferenceError("majority_vote needs at least one label")
    counts: dict[StanceLabel, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    best = max(counts.values())
    for label in TIE_ORDER:
        if counts.get(label, 0) == best:
            return label
    raise AssertionError("unreachable: TIE_ORDER covers every label")


def fixed_experts_from_pool(pool: ExpertPool, rank: str, by: str, n: int = 3) -> list[ExpertName]:
    """Global top/bottom experts of the pool by count or accuracy."""
    if not pool.experts:
        raise InferenceError("expert pool is empty")

    def metric(stats: ExpertStats) -> float:
        return stats.count if by == "frequency" else stats.acc

    def secondary(stats: ExpertStats) -> float:
        return stats.acc if by == "frequency" else stats.count

    if rank == "top3":
        ordered = sorted(
            pool.experts, key=lambda s: (-metric(s), -secondary(s), s.expert.canonical)
        )
    else:
        ordered = sorted(
            pool.experts, key=lambda s: (metric(s), secondary(s), s.expert.canonical)
        )
    return [stats.expert for stats in ordered[:n]]


_ROLE_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def _anonymize(experts: list[ExpertName], style: str) -> list[ExpertName]:
    word = "Expert" if style == "expert_abc" else "Person"
    roles = []
    for index in range(len(experts)):
        display = f"{word} {_ROLE_LETTERS[index % len(_ROLE_LETTERS)]}"
        roles.append(ExpertName(canonical=display.lower(), display=display))
    return roles


# --- prediction ---

@dataclass
class _Prepared:
    instance: Instance
    prompt: str
    experts_used: list[ExpertName]
    n_samples: int
    temperature: float


def _prepare(
    instance: Instance,
    repo: Repository | None,
    pool: ExpertPool | None,
    config: InferenceConfig,
    demos: list[DemonstrationSpec],
) -> _Prepared:
    mode = config.mode
    if mode in ("few_shot", "self_consistency"):
        prompt = render_inference_prompt(demos, instance, [], d=config.d, few_shot=True)
        n = config.sc_samples if mode == "self_consistency" else 1
        temperature = config.sc_temperature if (mode == "self_consistency" and n > 1) else config.temperature
        return _Prepared(instance, prompt, [], n, temperature)
    if mode == "fixed_experts":
        if pool is None:
            raise InferenceError("fixed_experts mode needs an expert pool")
        experts = fixed_experts_from_pool(pool, config.fixed_rank, config.fixed_by)
    else:  # deem | anonymized
        if repo is None:
            raise InferenceError(f"{mode} mode needs a repository")
        retrieval = retrieve_experts(repo, instance.sentence, h=config.h, h_unit=config.h_unit)
        experts = retrieval.experts
        if mode == "anonymized":
            experts = _anonymize(experts, config.anonymized_style)
    prompt = render_inference_prompt(demos, instance, experts, turns=config.turns, d=config.d)
    return _Prepared(instance, prompt, experts, 1, config.temperature)


def _finish(prepared: _Prepared, outcomes: list) -> Prediction:
    instance = prepared.instance
    n_targets = len(instance.targets)
    samples: list[str] = []
    errors: list[str] = []
    per_sample_labels: list[list[StanceLabel]] = []
    discussion = ""
    any_ok = False
    for outcome in outcomes:
        if isinstance(outcome, BackendError):
            errors.append(str(outcome))
            continue
        samples.append(outcome.text)
        labels, sample_discussion, ok = parse_inference_response(outcome.text, n_targets)
        if ok:
            per_sample_labels.append(labels)
            if not any_ok:
                discussion = sample_discussion
                any_ok = True
    if not per_sample_labels:
        return Prediction(
            instance_id=instance.id,
            labels=[None] * n_targets,
            discussion=discussion or (samples[0] if samples else ""),
            experts_used=prepared.experts_used,
            samples=samples,
            parse_ok=False,
            error="; ".join(errors) if errors else None,
        )
    voted: list[StanceLabel | None] = []
    for position in range(n_targets):
        voted.append(majority_vote([labels[position] for labels in per_sample_labels]))
    return Prediction(
        instance_id=instance.id,
        labels=voted,
        discussion=discussion,
        experts_used=prepared.experts_used,
        samples=samples,
        parse_ok=True,
        error="; ".join(errors) if errors else None,
    )


def _requests_for(prepared: _Prepared, model_id: str, max_tokens: int) -> list[CompletionRequest]:
    return [
        CompletionRequest(
            model_id=model_id,
            prompt=prepared.prompt,
            temperature=prepared.temperature,
            sample_index=index if prepared.temperature > 0 else 0,
            max_tokens=max_tokens,
        )
        for index in range(prepared.n_samples)
    ]


def predict(
    instance: Instance,
    repo: Repository | None,
    pool: ExpertPool | None,
    client: CompletionClient,
    config: InferenceConfig,
    demos: list[DemonstrationSpec],
    *,
    model_id: str,
) -> Prediction:
    """Predict the stance(s) of one instance under the configured mode.

    Backend and parse failures never raise; they come back as a sentinel
    prediction (``parse_ok=False``, labels ``None``) that evaluation counts
    as wrong for every label.
    """
    prepared = _prepare(instance, repo, pool, config, demos)
    outcomes = []
    for request in _requests_for(prepared, model_id, config.max_tokens):
        try:
            outcomes.append(client.complete(request))
        except BackendError as exc:
            outcomes.append(exc)
    return _finish(prepared, outcomes)


def predict_batch(
    instances: list[Instance],
    repo: Repository | None,
    pool: ExpertPool | None,
    client: CompletionClient,
    config: InferenceConfig,
    demos: list[DemonstrationSpec],
    *,
    model_id: str,
    parallelism: int = 1,
) -> list[Prediction]:
    """Predict a batch; order preserved, completions fanned out through the
    backend worker pool, reruns resumable via the response cache."""
    if not instances:
        return []
    prepared_all = [_prepare(inst, repo, pool, config, demos) for inst in instances]
    flat_requests: list[CompletionRequest] = []
    spans: list[tuple[int, int]] = []
    for prepared in prepared_all:
        requests = _requests_for(prepared, model_id, config.max_tokens)
        spans.append((len(flat_requests), len(requests)))
        flat_requests.extend(requests)
    flat_results = client.complete_batch(flat_requests, parallelism=parallelism)
    predictions = []
    for prepared, (start, count) in zip(prepared_all, spans):
        predictions.append(_finish(prepared, flat_results[start : start + count]))
    return predictions
