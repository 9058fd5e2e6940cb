from __future__ import annotations

import random

import pytest

from deem.config import RunConfig, load_run_config, resolve_path
from deem.corpus import Corpus, Instance, StanceLabel, load_corpus
from deem.expertgen import ExpertName, GenerationRecord

CONFIG_PATH = "/root/pkg/configs/toy_mock.json"

LABELS = [StanceLabel.FAVOR, StanceLabel.AGAINST, StanceLabel.NEUTRAL, StanceLabel.NONE]


def make_instance(
    id: str,
    sentence: str = "some sentence about the target",
    target: str = "Target",
    label: StanceLabel = StanceLabel.FAVOR,
    split: str = "train",
    stances: tuple | None = None,
) -> Instance:
    if stances is None:
        stances = ((target, label),)
    return Instance(id=id, sentence=sentence, stances=stances, split=split)


def make_corpus(instances: list[Instance], name: str = "test-corpus") -> Corpus:
    label_set = frozenset(label for inst in instances for label in inst.labels)
    return Corpus(name=name, instances=tuple(instances), label_set=label_set)


def expert(raw: str) -> ExpertName:
    name = ExpertName.from_raw(raw)
    assert name is not None
    return name


EXPERT_VOCAB = [
    "Political Expert",
    "Media Expert",
    "Ethics Expert",
    "Economic Expert",
    "Social Media Expert",
    "Polling Expert",
    "Legal Expert",
    "History Expert",
    "Gender Expert",
    "Technology Expert",
]


def synth_corpus(rng: random.Random, n: int = 60, name: str = "synth") -> Corpus:
    instances = []
    for index in range(n):
        label = rng.choice(LABELS)
        instances.append(
            make_instance(
                f"synth-{index:04d}",
                sentence=f"synthetic sentence number {index} with token{rng.randrange(20)}",
                label=label,
                split="train",
            )
        )
    return make_corpus(instances, name=name)


def synth_records(rng: random.Random, corpus: Corpus, vocab=None) -> list[GenerationRecord]:
    """Random parse-ok generation records over the corpus' train instances."""
    vocab = vocab or EXPERT_VOCAB
    records = []
    for inst in corpus.instances:
        if inst.split != "train":
            continue
        experts = [expert(raw) for raw in rng.sample(vocab, rng.randrange(1, 4))]
        predicted = [rng.choice(LABELS) for _ in inst.targets]
        records.append(
            GenerationRecord(
                instance_id=inst.id,
                experts=experts,
                predicted=predicted,
                raw_response="synthetic",
                parse_ok=True,
            )
        )
    return records


@pytest.fixture
def toy_corpus() -> Corpus:
    return load_corpus(resolve_path("pkg:toy_corpus.jsonl"), name="toy-politics")


@pytest.fixture
def toy_config(tmp_path) -> RunConfig:
    config = load_run_config(CONFIG_PATH)
    config.output_dir = str(tmp_path / "out")
    config.cache_dir = str(tmp_path / "cache")
    return config
