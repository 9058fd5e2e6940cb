"""Batch command-line surface: generate, filter, build-repo, infer, evaluate,
run-all.

Each command reads the single run-config file (plus ``--set`` overrides),
writes its artifact under the output directory, and prints one
machine-readable JSON summary line on stdout.  Commands are idempotent
given a warm cache; later commands fail fast with the name of the missing
prerequisite command.  Soft per-item failures (unparseable completions)
are reported in the summary but never change the exit status.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evaluation, expertfilter
from .backend import BackendError, CompletionClient, LiveBackend, MockBackend, ResponseCache
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    load_run_config,
    resolve_path,
)
from .corpus import Corpus, CorpusError, StanceLabel, load_corpus, split_view
from .encoder import HashingEncoder, RemoteEncoder
from .expertgen import (
    DemonstrationSpec,
    ExpertName,
    GenerationRecord,
    PromptError,
    generate_records,
    select_demonstrations,
)
from .inference import InferenceConfig, InferenceError, Prediction, predict_batch
from .ioutil import atomic_write_text, canonical_json, read_jsonl, write_jsonl
from .repository import (
    RepositoryError,
    build_repository,
    load_repository,
    save_repository,
)

log = logging.getLogger(__name__)


class MissingArtifactError(Exception):
    def __init__(self, artifact: str, command: str):
        super().__init__(f"missing {artifact}; run `deem {command}` first")


def artifact_paths(config: RunConfig) -> dict[str, Path]:
    out = Path(config.output_dir)
    return {
        "records": out / "records.jsonl",
        "pool": out / "pool.json",
        "sweep": out / "sweep.csv",
        "repository": out / "repository.jsonl",
        "predictions": out / "predictions.jsonl",
        "report": out / "report.json",
        "report_txt": out / "report.txt",
    }


def make_backend(config: RunConfig) -> CompletionClient:
    backend_config = config.backend
    if backend_config.provider == "mock":
        fixture = resolve_path(backend_config.mock_fixture) if backend_config.mock_fixture else None
        provider = MockBackend(fixture_path=fixture, fallback=backend_config.mock_fallback)
    elif backend_config.provider == "live":
        api_key = os.environ.get(backend_config.api_key_env)
        provider = LiveBackend(base_url=backend_config.base_url, api_key=api_key)
    else:
        raise ConfigError(f"unknown backend provider {backend_config.provider!r}")
    cache = ResponseCache(config.resolved_cache_dir())
    return CompletionClient(
        provider, cache=cache, max_parallelism=backend_config.max_parallelism
    )


def make_encoder(config: RunConfig):
    encoder_config = config.encoder
    if encoder_config.provider == "hash":
        return HashingEncoder(dim=encoder_config.dim)
    if encoder_config.provider == "remote":
        api_key = os.environ.get(config.backend.api_key_env)
        return RemoteEncoder(
            base_url=encoder_config.base_url,
            model=encoder_config.model,
            api_key=api_key,
            normalize=encoder_config.normalize,
        )
    raise ConfigError(f"unknown encoder provider {encoder_config.provider!r}")


def load_demo_fixture(path: str) -> tuple[list[ExpertName], dict[str, str]]:
    with open(resolve_path(path), "r", encoding="utf-8") as handle:
        data = json.load(handle)
    experts = []
    for raw in data["experts"]:
        name = ExpertName.from_raw(raw)
        if name is None:
            raise ConfigError(f"demo fixture expert {raw!r} normalizes to nothing")
        experts.append(name)
    return experts, dict(data.get("discussions", {}))


def _load_corpus(config: RunConfig) -> Corpus:
    return load_corpus(
        resolve_path(config.corpus.path),
        format=config.corpus.format,
        name=config.corpus.name or None,
    )


def _demos(config: RunConfig, corpus: Corpus) -> list[DemonstrationSpec]:
    experts, discussions = load_demo_fixture(config.stage1.demo_fixture)
    if len(experts) != config.stage1.k:
        raise ConfigError(
            f"demo fixture has {len(experts)} experts but stage1.k = {config.stage1.k}"
        )
    return select_demonstrations(
        corpus,
        config.stage1.d,
        experts,
        discussions=discussions,
        mode=config.stage1.demo_selection,
        seed=config.seed,
    )


def _backend_summary(client: CompletionClient) -> dict:
    return {"provider_calls": client.provider_calls, "cache_hits": client.cache_hits}


# --- commands ---

def cmd_generate(config: RunConfig) -> dict:
    corpus = _load_corpus(config)
    demos = _demos(config, corpus)
    client = make_backend(config)
    paths = artifact_paths(config)
    result = generate_records(
        corpus,
        demos,
        client,
        model_id=config.backend.model,
        d=config.stage1.d,
        max_tokens=config.stage1.max_tokens,
        parallelism=config.backend.parallelism,
        records_path=paths["records"],
        meta={"kind": "records", "config_fingerprint": config.fingerprint(), "version": 1},
    )
    return {
        "outputs": {"records": str(paths["records"])},
        "counts": {
            "records": len(result.records),
            "generated": result.generated,
            "resumed": result.resumed,
            "parse_failures": result.parse_failures,
            "backend_failures": result.backend_failures,
        },
        "backend": _backend_summary(client),
    }


def _read_records(config: RunConfig) -> list[GenerationRecord]:
    paths = artifact_paths(config)
    if not paths["records"].exists():
        raise MissingArtifactError("records file", "generate")
    _, rows = read_jsonl(paths["records"])
    return [GenerationRecord.from_dict(row) for row in rows]


def cmd_filter(config: RunConfig) -> dict:
    corpus = _load_corpus(config)
    records = _read_records(config)
    paths = artifact_paths(config)
    stats = expertfilter.compute_stats(records, corpus, rule=config.stage2.multi_target_rule)
    per_sentence = expertfilter.experts_by_sentence(records)
    pool = expertfilter.filter_pool(
        stats,
        per_sentence,
        acc_threshold=config.stage2.acc_threshold,
        top_k=config.stage2.top_k,
    )
    selected = {s.expert.canonical for s in pool.experts}
    document = {
        "_meta": {"kind": "pool", "config_fingerprint": config.fingerprint(), "version": 1},
        "acc_threshold": pool.acc_threshold,
        "top_k": pool.top_k,
        "experts": [s.to_dict(selected=s.expert.canonical in selected) for s in stats],
        "per_sentence": {
            instance_id: [expert.to_dict() for expert in experts]
            for instance_id, experts in pool.per_sentence.items()
        },
        "fallback_ids": sorted(pool.fallback_ids),
    }
    atomic_write_text(paths["pool"], canonical_json(document) + "\n")
    outputs = {"pool": str(paths["pool"])}
    counts = {
        "experts_total": len(stats),
        "experts_selected": len(pool.experts),
        "sentences": len(pool.per_sentence),
        "fallback_sentences": len(pool.fallback_ids),
    }
    if config.stage2.sweep_thresholds and config.stage2.sweep_ks:
        cells = expertfilter.sweep_thresholds(
            records,
            corpus,
            config.stage2.sweep_thresholds,
            config.stage2.sweep_ks,
            rule=config.stage2.multi_target_rule,
        )
        lines = ["acc_threshold,top_k,pool_size,mean_acc,coverage"]
        for cell in cells:
            lines.append(
                f"{cell.acc_threshold},{cell.top_k},{cell.pool_size},{cell.mean_acc},{cell.coverage}"
            )
        atomic_write_text(paths["sweep"], "\n".join(lines) + "\n")
        outputs["sweep"] = str(paths["sweep"])
        counts["sweep_cells"] = len(cells)
    return {"outputs": outputs, "counts": counts}


def _read_pool(config: RunConfig) -> expertfilter.ExpertPool:
    paths = artifact_paths(config)
    if not paths["pool"].exists():
        raise MissingArtifactError("pool file", "filter")
    with open(paths["pool"], "r", encoding="utf-8") as handle:
        document = json.load(handle)
    experts = [
        expertfilter.ExpertStats.from_dict(row)
        for row in document["experts"]
        if row.get("selected")
    ]
    experts.sort(key=expertfilter.selection_order)
    per_sentence = {
        instance_id: [ExpertName.from_dict(expert) for expert in row]
        for instance_id, row in document["per_sentence"].items()
    }
    return expertfilter.ExpertPool(
        experts=experts,
        acc_threshold=document["acc_threshold"],
        top_k=document["top_k"],
        per_sentence=per_sentence,
        fallback_ids=frozenset(document.get("fallback_ids", [])),
    )


def cmd_build_repo(config: RunConfig) -> dict:
    corpus = _load_corpus(config)
    pool = _read_pool(config)
    encoder = make_encoder(config)
    paths = artifact_paths(config)
    repo = build_repository(pool, corpus, encoder)
    save_repository(
        repo,
        paths["repository"],
        extra_meta={"config_fingerprint": config.fingerprint()},
    )
    return {
        "outputs": {"repository": str(paths["repository"])},
        "counts": {"entries": len(repo.entries), "skipped": repo.build_skipped},
    }


def cmd_infer(config: RunConfig) -> dict:
    corpus = _load_corpus(config)
    paths = artifact_paths(config)
    inference_config = InferenceConfig(
        d=config.stage1.d,
        h=config.stage3.h,
        turns=config.stage3.turns,
        mode=config.stage3.mode,
        temperature=config.temperature,
        max_tokens=config.stage3.max_tokens,
        fixed_rank=config.stage3.fixed_rank,
        fixed_by=config.stage3.fixed_by,
        anonymized_style=config.stage3.anonymized_style,
        sc_samples=config.stage3.sc_samples,
        sc_temperature=config.stage3.sc_temperature,
        h_unit=config.stage3.h_unit,
    )
    repo = None
    pool = None
    if inference_config.mode in ("deem", "anonymized"):
        if not paths["repository"].exists():
            raise MissingArtifactError("repository file", "build-repo")
        repo = load_repository(paths["repository"], encoder=make_encoder(config))
    if inference_config.mode == "fixed_experts":
        pool = _read_pool(config)
    demos = _demos(config, corpus)
    client = make_backend(config)
    predictions = predict_batch(
        split_view(corpus, "test"),
        repo,
        pool,
        client,
        inference_config,
        demos,
        model_id=config.backend.model,
        parallelism=config.backend.parallelism,
    )
    write_jsonl(
        paths["predictions"],
        (prediction.to_dict() for prediction in predictions),
        meta={"kind": "predictions", "config_fingerprint": config.fingerprint(), "version": 1},
    )
    return {
        "outputs": {"predictions": str(paths["predictions"])},
        "counts": {
            "predictions": len(predictions),
            "parse_failures": sum(1 for p in predictions if not p.parse_ok),
        },
        "backend": _backend_summary(client),
    }


def cmd_evaluate(config: RunConfig) -> dict:
    corpus = _load_corpus(config)
    paths = artifact_paths(config)
    if not paths["predictions"].exists():
        raise MissingArtifactError("predictions file", "infer")
    _, rows = read_jsonl(paths["predictions"])
    predictions = [Prediction.from_dict(row) for row in rows]
    reports = evaluation.evaluate_run(
        corpus, predictions, config_fingerprint=config.fingerprint()
    )
    document = {
        "_meta": {"kind": "report", "config_fingerprint": config.fingerprint(), "version": 1},
        "reports": [report.to_dict() for report in reports],
    }
    if StanceLabel.NEUTRAL in corpus.label_set:
        try:
            document["neutral_overall"] = evaluation.bias_subset_report(
                corpus, predictions
            ).to_dict()
        except evaluation.EmptySubsetError:
            pass
    atomic_write_text(paths["report"], canonical_json(document) + "\n")
    atomic_write_text(paths["report_txt"], evaluation.format_report_table(reports))
    return {
        "outputs": {"report": str(paths["report"]), "report_txt": str(paths["report_txt"])},
        "counts": {"reports": len(reports)},
        "f1_avg": {report.target: report.f1_avg for report in reports},
    }


def cmd_run_all(config: RunConfig) -> dict:
    stages = {}
    stages["generate"] = cmd_generate(config)
    stages["filter"] = cmd_filter(config)
    stages["build-repo"] = cmd_build_repo(config)
    stages["infer"] = cmd_infer(config)
    stages["evaluate"] = cmd_evaluate(config)
    backend_totals = {
        "provider_calls": sum(
            stage.get("backend", {}).get("provider_calls", 0) for stage in stages.values()
        ),
        "cache_hits": sum(
            stage.get("backend", {}).get("cache_hits", 0) for stage in stages.values()
        ),
    }
    return {"stages": stages, "backend": backend_totals}


_COMMANDS = {
    "generate": cmd_generate,
    "filter": cmd_filter,
    "build-repo": cmd_build_repo,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "run-all": cmd_run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deem",
        description="Expert-retrieval stance detection pipeline (batch commands)",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=True, help="path to the run-config JSON file")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="FIELD=VALUE",
            help="override a config field, e.g. --set stage2.top_k=10",
        )
        sub.add_argument(
            "--mock",
            action="store_true",
            help="force the scripted mock backend and hash encoder",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config)
        apply_overrides(config, args.overrides)
        if args.mock:
            config.backend.provider = "mock"
            config.backend.mock_fallback = True
            config.encoder.provider = "hash"
        summary = _COMMANDS[args.command](config)
    except (
        ConfigError,
        CorpusError,
        PromptError,
        InferenceError,
        RepositoryError,
        MissingArtifactError,
        BackendError,
        evaluation.EvalError,
        expertfilter.FilterError,
        FileNotFoundError,
    ) as exc:
        print(
            canonical_json(
                {
                    "command": args.command,
                    "status": "error",
                    "error": {"type": type(exc).__name__, "message": str(exc)},
                }
            )
        )
        return 1
    summary = {
        "command": args.command,
        "status": "ok",
        "config_fingerprint": config.fingerprint(),
        **summary,
    }
    print(canonical_json(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
