"""Sentence encoders and the softmax similarity used for retrieval.

Two providers share one interface: a network-free feature-hashing encoder
(the default for tests and mock runs) and a remote OpenAI-compatible
embeddings endpoint.  Dot products are accumulated with ``math.fsum`` so
similarity rankings are bit-identical across platforms.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np


class EncoderError(Exception):
    pass


class EmptySentenceError(EncoderError):
    pass


class DimensionMismatchError(EncoderError):
    pass


@dataclass(frozen=True, eq=False)
class Embedding:
    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


class HashingEncoder:
    """Feature-hashes lowercase word unigrams into a unit-norm vector.

    Deterministic by construction (sha256 bucketing, exactly-rounded
    normalization), so similar sentences share buckets and repeated runs
    produce identical vectors on any platform.
    """

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise EncoderError("dim must be positive")
        self.dim = dim
        self.identity = f"hash-unigram-{dim}"
        self.calls = 0

    def encode(self, sentence: str) -> Embedding:
        self.calls += 1
        if not sentence.strip():
            raise EmptySentenceError("cannot encode an empty sentence")
        tokens = _TOKEN_RE.findall(sentence.lower())
        if not tokens:
            raise EmptySentenceError(f"no tokens in sentence: {sentence!r}")
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            vec[_bucket(token, self.dim)] += 1.0
        norm = math.sqrt(math.fsum(float(v) * float(v) for v in vec if v))
        return Embedding(values=vec / norm)


class RemoteEncoder:
    """OpenAI-compatible embeddings endpoint behind the encoder interface."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        normalize: bool = False,
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.normalize = normalize
        self.timeout = timeout
        self.identity = f"remote:{model}" + (":norm" if normalize else "")
        self.calls = 0
        import requests

        self._requests = requests
        self._session = requests.Session()
        self._dim: int | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            raise EncoderError("remote encoder dimension unknown before first encode")
        return self._dim

    def encode(self, sentence: str) -> Embedding:
        self.calls += 1
        if not sentence.strip():
            raise EmptySentenceError("cannot encode an empty sentence")
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self._session.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": sentence},
                headers=headers,
                timeout=self.timeout,
            )
        except self._requests.RequestException as exc:
            raise EncoderError(f"embedding request failed: {exc}")
        if response.status_code != 200:
            raise EncoderError(f"embedding request failed: HTTP {response.status_code}")
        try:
            values = response.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EncoderError(f"malformed embedding payload: {exc}")
        vec = np.asarray(values, dtype=np.float64)
        if self.normalize:
            norm = math.sqrt(math.fsum(float(v) * float(v) for v in vec))
            if norm > 0:
                vec = vec / norm
        if self._dim is None:
            self._dim = int(vec.shape[0])
        elif self._dim != vec.shape[0]:
            raise DimensionMismatchError(
                f"endpoint returned dim {vec.shape[0]}, expected {self._dim}"
            )
        return Embedding(values=vec)


def dot(a: Embedding, b: Embedding) -> float:
    """Exactly-rounded dot product (elementwise multiply + fsum)."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dims differ: {a.dim} vs {b.dim}")
    return math.fsum(np.multiply(a.values, b.values).tolist())


def similarity_distribution(query: Embedding, keys: list[Embedding]) -> list[float]:
    """Softmax of the query's dot products against every key.

    Computed with max-subtraction for stability; the output sums to 1 within
    1e-9 and is strictly monotone in the raw dot products, so ranking by
    either is equivalent.
    """
    if not keys:
        raise EncoderError("keys must be non-empty")
    dots = [dot(query, key) for key in keys]
    peak = max(dots)
    exps = [math.exp(value - peak) for value in dots]
    total = math.fsum(exps)
    return [value / total for value in exps]
