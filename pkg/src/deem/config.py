"""Run configuration: one file drives every pipeline stage.

Defaults follow the reference operating point: 2 demonstrations, 3 manual
experts per demonstration, 3 retrieved experts, temperature 0, accuracy
threshold 0.5 and a top-20 frequency cut.  Configs are JSON; any field can
be overridden on the command line with ``--set section.field=value``.
Secrets never live in the file — only the name of the environment variable
holding the API key does.

Paths may use the ``pkg:`` scheme (e.g. ``pkg:toy_corpus.jsonl``) to refer
to fixtures bundled with the package.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .ioutil import canonical_json, sha256_hex


class ConfigError(Exception):
    pass


def resolve_path(value: str) -> str:
    if value.startswith("pkg:"):
        fixture = resources.files("deem").joinpath("fixtures").joinpath(value[4:])
        return str(fixture)
    return value


@dataclass
class CorpusConfig:
    path: str = "pkg:toy_corpus.jsonl"
    format: str = "jsonl"
    name: str = ""


@dataclass
class BackendConfig:
    provider: str = "mock"  # mock | live
    model: str = "mock-chat"
    base_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    parallelism: int = 4
    max_parallelism: int = 8
    mock_fixture: str = ""
    mock_fallback: bool = True


@dataclass
class EncoderConfig:
    provider: str = "hash"  # hash | remote
    dim: int = 256
    model: str = ""
    base_url: str = ""
    normalize: bool = False


@dataclass
class Stage1Config:
    d: int = 2
    k: int = 3
    demo_fixture: str = "pkg:demo_fixture.json"
    demo_selection: str = "first-distinct"  # first-distinct | random
    max_tokens: int = 256


@dataclass
class Stage2Config:
    acc_threshold: float = 0.5
    top_k: int = 20
    multi_target_rule: str = "strict"  # strict | fractional
    sweep_thresholds: list[float] = field(default_factory=list)
    sweep_ks: list[int] = field(default_factory=list)


@dataclass
class Stage3Config:
    h: int = 3
    turns: int = 1
    mode: str = "deem"
    h_unit: str = "experts"
    fixed_rank: str = "top3"
    fixed_by: str = "frequency"
    anonymized_style: str = "expert_abc"
    sc_samples: int = 3
    sc_temperature: float = 0.7
    max_tokens: int = 512


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stage3: Stage3Config = field(default_factory=Stage3Config)
    output_dir: str = "runs/out"
    cache_dir: str = ""  # empty → <output_dir>/cache
    seed: int = 0
    temperature: float = 0.0

    def resolved_cache_dir(self) -> str:
        return self.cache_dir or str(Path(self.output_dir) / "cache")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Digest of the run semantics.

        Output locations are excluded: where artifacts land cannot change
        their contents, and equal experiments must produce byte-identical
        files regardless of directory.
        """
        payload = self.to_dict()
        payload.pop("output_dir")
        payload.pop("cache_dir")
        return sha256_hex(canonical_json(payload))


_SECTIONS = {
    "corpus": CorpusConfig,
    "backend": BackendConfig,
    "encoder": EncoderConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "stage3": Stage3Config,
}


def config_from_dict(data: dict) -> RunConfig:
    kwargs = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in data.items():
        if key in _SECTIONS:
            section_cls = _SECTIONS[key]
            section_fields = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(value) - section_fields
            if bad:
                raise ConfigError(f"unknown keys in '{key}': {', '.join(sorted(bad))}")
            kwargs[key] = section_cls(**value)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be an object")
    try:
        return config_from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}")


def _coerce(current, raw: str):
    if isinstance(current, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        return json.loads(raw)
    return raw


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.field=value`` (or ``field=value``) overrides in place."""
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override must look like field=value, got {override!r}")
        dotted, raw = override.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) == 1:
            target, attr = config, parts[0]
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            target, attr = getattr(config, parts[0]), parts[1]
        else:
            raise ConfigError(f"unknown config field {dotted!r}")
        if not hasattr(target, attr):
            raise ConfigError(f"unknown config field {dotted!r}")
        try:
            setattr(target, attr, _coerce(getattr(target, attr), raw))
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad value for {dotted!r}: {exc}")
    return config
