"""Stage 3a: the sentence-expert repository and top-h retrieval.

Each train sentence that survived filtering becomes an entry keyed by its
embedding and carrying its filtered expert list.  At inference time a new
sentence is scored against every entry with the softmax similarity and the
experts of the most similar sentences are accumulated (deduplicated, order
within a source preserved) until ``h`` experts are collected.

Repositories are exhaustive-scan: at the dataset sizes this pipeline
targets (a few thousand entries) a full scan is sub-millisecond and keeps
retrieval exactly equal to a brute-force dot-product sort.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, split_view
from .encoder import Embedding, EncoderError, similarity_distribution
from .expertfilter import ExpertPool
from .expertgen import ExpertName
from .ioutil import atomic_write_text, canonical_json

log = logging.getLogger(__name__)

FILE_VERSION = 1


class RepositoryError(Exception):
    pass


class EmptyRepositoryError(RepositoryError):
    pass


class EncoderMismatchError(RepositoryError):
    pass


@dataclass
class RepositoryEntry:
    instance_id: str
    sentence: str
    embedding: np.ndarray  # float64 values exactly representable in float32
    experts: list[ExpertName]


@dataclass
class Repository:
    encoder_id: str
    dim: int
    entries: list[RepositoryEntry]
    encoder: object | None = None  # live encoder, never serialized
    build_skipped: int = 0


@dataclass
class RetrievalResult:
    experts: list[ExpertName]  # deduplicated, at most h
    sources: list[tuple[str, float]]  # contributing entries, similarity descending


def _storage_round(values: np.ndarray) -> np.ndarray:
    # Round once to float32 at build time so in-memory retrieval matches
    # retrieval after a save/load round-trip bit for bit.
    return values.astype(np.float32).astype(np.float64)


def build_repository(pool: ExpertPool, corpus: Corpus, encoder) -> Repository:
    """One entry per train instance covered by the pool's sentence mapping.

    Entries whose expert list is empty (possible only with a degenerate
    pool) and entries whose sentence fails to encode are skipped with a
    warning; the skip count is kept on the repository.
    """
    if not pool.per_sentence:
        raise EmptyRepositoryError("pool has no per-sentence mapping; nothing to index")
    entries: list[RepositoryEntry] = []
    skipped = 0
    for inst in split_view(corpus, "train"):
        experts = pool.per_sentence.get(inst.id)
        if experts is None:
            continue
        if not experts:
            log.warning("skipping %s: empty expert list", inst.id)
            skipped += 1
            continue
        try:
            embedding = encoder.encode(inst.sentence)
        except EncoderError as exc:
            log.warning("skipping %s: encoder failure: %s", inst.id, exc)
            skipped += 1
            continue
        entries.append(
            RepositoryEntry(
                instance_id=inst.id,
                sentence=inst.sentence,
                embedding=_storage_round(embedding.values),
                experts=list(experts),
            )
        )
    if not entries:
        raise EmptyRepositoryError("repository would be empty: no train instance produced an entry")
    return Repository(
        encoder_id=encoder.identity,
        dim=int(entries[0].embedding.shape[0]),
        entries=entries,
        encoder=encoder,
        build_skipped=skipped,
    )


def score_entries(repo: Repository, query: Embedding) -> list[float]:
    """Softmax similarity of the query against every entry, in entry order."""
    if not repo.entries:
        raise EmptyRepositoryError("repository has no entries")
    keys = [Embedding(values=entry.embedding) for entry in repo.entries]
    return similarity_distribution(query, keys)


def retrieve_by_embedding(
    repo: Repository, query: Embedding, h: int = 3, h_unit: str = "experts"
) -> RetrievalResult:
    """Greedy expert accumulation over entries in descending similarity.

    ``h_unit`` selects what ``h`` counts: "experts" (default) stops once h
    distinct experts are collected; "sources" takes every expert of the h
    most similar entries.  Ties in similarity break by instance id.
    """
    if h < 1:
        raise RepositoryError(f"h must be >= 1, got {h}")
    if h_unit not in ("experts", "sources"):
        raise RepositoryError(f"h_unit must be 'experts' or 'sources', got {h_unit!r}")
    scores = score_entries(repo, query)
    order = sorted(
        range(len(repo.entries)),
        key=lambda i: (-scores[i], repo.entries[i].instance_id),
    )
    collected: list[ExpertName] = []
    seen: set[str] = set()
    sources: list[tuple[str, float]] = []
    for rank, index in enumerate(order):
        if h_unit == "experts" and len(collected) >= h:
            break
        if h_unit == "sources" and rank >= h:
            break
        entry = repo.entries[index]
        contributed = False
        for expert in entry.experts:
            if h_unit == "experts" and len(collected) >= h:
                break
            if expert.canonical in seen:
                continue
            seen.add(expert.canonical)
            collected.append(expert)
            contributed = True
        if contributed or h_unit == "sources":
            sources.append((entry.instance_id, scores[index]))
    return RetrievalResult(experts=collected, sources=sources)


def retrieve_experts(
    repo: Repository, sentence: str, h: int = 3, h_unit: str = "experts"
) -> RetrievalResult:
    """Encode a sentence with the repository's encoder and retrieve experts."""
    if repo.encoder is None:
        raise EncoderMismatchError("repository has no encoder attached; load with an encoder")
    if repo.encoder.identity != repo.encoder_id:
        raise EncoderMismatchError(
            f"repository was built with {repo.encoder_id!r} but got {repo.encoder.identity!r}"
        )
    query = repo.encoder.encode(sentence)
    return retrieve_by_embedding(repo, query, h=h, h_unit=h_unit)


# --- persistence ---
#
# JSONL layout: a header line {"version", "encoder", "dim", "entry_count",
# "embedding_format", ...extra meta}, then one line per entry.  Embeddings
# are stored either as base64 little-endian float32 ("f32le") or as decimal
# strings with 9 significant digits ("text"); both round-trip the float32
# values exactly.

def _encode_embedding(values: np.ndarray, fmt: str) -> str | list[str]:
    as_f32 = values.astype("<f4")
    if fmt == "f32le":
        return base64.b64encode(as_f32.tobytes()).decode("ascii")
    if fmt == "text":
        return [f"{float(v):.9g}" for v in as_f32]
    raise RepositoryError(f"unknown embedding format {fmt!r}")


def _decode_embedding(raw: str | list[str], fmt: str, dim: int) -> np.ndarray:
    if fmt == "f32le":
        values = np.frombuffer(base64.b64decode(raw), dtype="<f4")
    elif fmt == "text":
        values = np.asarray([float(v) for v in raw], dtype="<f4")
    else:
        raise RepositoryError(f"unknown embedding format {fmt!r}")
    if values.shape[0] != dim:
        raise RepositoryError(f"entry embedding has dim {values.shape[0]}, header says {dim}")
    return values.astype(np.float64)


def save_repository(
    repo: Repository,
    path,
    embedding_format: str = "f32le",
    extra_meta: dict | None = None,
) -> None:
    header = {
        "version": FILE_VERSION,
        "encoder": repo.encoder_id,
        "dim": repo.dim,
        "entry_count": len(repo.entries),
        "embedding_format": embedding_format,
    }
    if extra_meta:
        header.update(extra_meta)
    lines = [canonical_json(header)]
    for entry in repo.entries:
        lines.append(
            canonical_json(
                {
                    "id": entry.instance_id,
                    "sentence": entry.sentence,
                    "embedding": _encode_embedding(entry.embedding, embedding_format),
                    "experts": [expert.to_dict() for expert in entry.experts],
                }
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_repository(path, encoder=None) -> Repository:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle if line.strip()]
    if not lines:
        raise RepositoryError(f"repository file {path} is empty")
    header = json.loads(lines[0])
    if header.get("version") != FILE_VERSION:
        raise RepositoryError(f"unsupported repository version {header.get('version')!r}")
    fmt = header["embedding_format"]
    dim = int(header["dim"])
    if encoder is not None and encoder.identity != header["encoder"]:
        raise EncoderMismatchError(
            f"repository was built with {header['encoder']!r} but got {encoder.identity!r}"
        )
    entries = []
    for line in lines[1:]:
        row = json.loads(line)
        entries.append(
            RepositoryEntry(
                instance_id=row["id"],
                sentence=row["sentence"],
                embedding=_decode_embedding(row["embedding"], fmt, dim),
                experts=[ExpertName.from_dict(expert) for expert in row["experts"]],
            )
        )
    if len(entries) != int(header["entry_count"]):
        raise RepositoryError(
            f"header claims {header['entry_count']} entries, file has {len(entries)}"
        )
    if not entries:
        raise EmptyRepositoryError("repository file has no entries")
    return Repository(
        encoder_id=header["encoder"], dim=dim, entries=entries, encoder=encoder
    )
