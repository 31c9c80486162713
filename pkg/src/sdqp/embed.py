"""Text-to-vector pipeline: sentence segmentation, token-budget chunk packing,
per-chunk embedding through a pluggable provider, mean pooling, and a binary
on-disk embedding cache keyed by (provider identity, chunk text hash).
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import struct
import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np
import requests

log = logging.getLogger(__name__)

EMBEDDING_DIM = 768
STUB_TOKEN_BUDGET = 512

CACHE_MAGIC = b"SDQE"
CACHE_VERSION = 1
_KEY_BYTES = 32
_PROVIDER_BYTES = 8
_CHECKSUM_BYTES = 4


class EmbeddingError(RuntimeError):
    """Provider or cache failure during embedding."""


# ---------------------------------------------------------------------------
# segmentation and packing

_WS_RE = re.compile(r"\s+")

# words that end with a period mid-sentence; compared casefolded
ABBREVIATIONS = frozenset({
    "al.", "approx.", "ca.", "cf.", "dr.", "e.g.", "eq.", "eqs.", "etc.",
    "fig.", "figs.", "i.e.", "ibid.", "mr.", "mrs.", "ms.", "no.", "prof.",
    "resp.", "sec.", "tab.", "vs.",
})

_CLOSERS = "\"')]"


def normalize_whitespace(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def _guarded(norm: str, dot: int) -> bool:
    start = norm.rfind(" ", 0, dot) + 1
    word = norm[start : dot + 1]
    return word.casefold() in ABBREVIATIONS


def segment_sentences(text: str) -> list:
    """Split whitespace-normalized text at sentence-final punctuation.

    Periods after known abbreviations do not split, nor does punctuation
    followed by a lowercase continuation. Joining the result with single
    spaces reproduces the normalized input exactly.
    """
    norm = normalize_whitespace(text)
    if not norm:
        return []
    sentences = []
    start = 0
    i = 0
    n = len(norm)
    while i < n:
        ch = norm[i]
        if ch in ".!?":
            j = i + 1
            while j < n and norm[j] in _CLOSERS:
                j += 1
            if j < n and norm[j] == " ":
                follower = norm[j + 1] if j + 1 < n else ""
                if not (ch == "." and _guarded(norm, i)) and not follower.islower():
                    sentences.append(norm[start:j])
                    start = j + 1
                    i = j
        i += 1
    if start < n:
        sentences.append(norm[start:])
    return sentences


def proxy_token_count(text: str) -> int:
    """Conservative stand-in for the real subword tokenizer: whitespace tokens
    times 1.3, rounded up. Only needs to avoid under-counting badly enough to
    overflow the model context; the serving side re-chunks defensively."""
    return math.ceil(len(text.split()) * 1.3)


@dataclass(frozen=True)
class ChunkPlan:
    """Ordered chunks of whole sentences; a flag marks chunks consisting of a
    single sentence that alone exceeds the token budget."""
    chunks: tuple
    over_budget: tuple

    def __post_init__(self):
        if len(self.chunks) != len(self.over_budget):
            raise ValueError("chunks and over_budget flags must align")


def pack_chunks(sentences, token_budget: int, token_counter=proxy_token_count) -> ChunkPlan:
    """Greedy packing: keep appending sentences while the chunk stays within
    budget; an over-budget single sentence becomes its own flagged chunk."""
    if token_budget < 1:
        raise ValueError(f"token budget must be >= 1, got {token_budget}")
    chunks = []
    flags = []
    current = ""
    for sentence in sentences:
        candidate = sentence if not current else current + " " + sentence
        if token_counter(candidate) <= token_budget:
            current = candidate
            continue
        if current:
            chunks.append(current)
            flags.append(False)
            current = ""
        if token_counter(sentence) <= token_budget:
            current = sentence
        else:
            chunks.append(sentence)
            flags.append(True)
    if current:
        chunks.append(current)
        flags.append(False)
    return ChunkPlan(tuple(chunks), tuple(flags))


# ---------------------------------------------------------------------------
# providers

class EmbeddingProvider:
    """Contract: a declared dimension, a per-chunk token budget, a stable
    identity string for cache keying, and a deterministic embed_chunk."""

    dimension: int
    token_budget: int
    provider_id: str

    def embed_chunk(self, text: str) -> np.ndarray:
        raise NotImplementedError


class DeterministicStubProvider(EmbeddingProvider):
    """Content-sensitive stand-in for the real encoder.

    Each whitespace token maps to a fixed pseudo-random vector drawn from a
    counter-based generator keyed by a hash of (seed, token); a chunk embeds
    to the L2-normalized mean of its token vectors. Same (seed, text) gives
    the same vector on every platform, and texts sharing tokens land closer
    in cosine than disjoint ones.
    """

    def __init__(self, seed: int = 0, dimension: int = EMBEDDING_DIM,
                 token_budget: int = STUB_TOKEN_BUDGET):
        self.seed = int(seed)
        self.dimension = dimension
        self.token_budget = token_budget
        self.provider_id = f"stub-{dimension}-{self.seed}"
        self._token_vectors: dict = {}
        self._lock = threading.Lock()

    def _token_vector(self, token: str) -> np.ndarray:
        with self._lock:
            cached = self._token_vectors.get(token)
        if cached is not None:
            return cached
        digest = hashlib.blake2b(f"{self.seed}\x1f{token}".encode("utf-8"),
                                 digest_size=16).digest()
        key = int.from_bytes(digest, "little")
        gen = np.random.Generator(np.random.Philox(key=key))
        vec = gen.standard_normal(self.dimension)
        with self._lock:
            self._token_vectors[token] = vec
        return vec

    def embed_chunk(self, text: str) -> np.ndarray:
        tokens = text.split()
        if not tokens:
            raise EmbeddingError("cannot embed empty chunk")
        mean = np.mean([self._token_vector(t) for t in tokens], axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            raise EmbeddingError("degenerate zero-norm chunk vector")
        return (mean / norm).astype(np.float32)


def deterministic_test_embedder(seed: int = 0) -> DeterministicStubProvider:
    return DeterministicStubProvider(seed=seed)


class RemoteProvider(EmbeddingProvider):
    """Provider backed by the embedding HTTP service.

    Reads /info once at construction to learn dimension, token budget and the
    pinned model revision; embed_chunk posts a single-text /embed request.
    Warm-up (503) and connection errors are retried with backoff.
    """

    def __init__(self, endpoint: str, api_key: str = None, timeout: float = 30.0,
                 retries: int = 3, backoff: float = 0.5):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        info = self._request("GET", "/info")
        try:
            self.dimension = int(info["dimension"])
            self.token_budget = int(info["max_tokens"])
            self.model_id = str(info["model_id"])
            self.revision = str(info["revision"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"malformed /info response: {info!r}") from exc
        self.provider_id = f"remote:{self.model_id}@{self.revision}"

    def _headers(self) -> dict:
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["x-api-key"] = self.api_key
        return headers

    def _request(self, method: str, path: str, body: dict = None):
        url = self.endpoint + path
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.request(method, url, json=body, headers=self._headers(),
                                        timeout=self.timeout)
            except requests.RequestException as exc:
                last = EmbeddingError(f"{method} {url} failed: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise EmbeddingError(f"{url} returned non-JSON body") from exc
                last = EmbeddingError(f"{method} {url} returned {resp.status_code}")
                if resp.status_code != 503:
                    raise last
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise last

    def embed_chunk(self, text: str) -> np.ndarray:
        payload = self._request("POST", "/embed", {"texts": [text]})
        try:
            values = payload["embeddings"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise EmbeddingError(f"malformed /embed response: {payload!r}") from exc
        vec = np.asarray(values, dtype=np.float32)
        if vec.shape != (self.dimension,):
            raise EmbeddingError(f"expected {self.dimension} dims, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError("non-finite embedding from provider")
        return vec


# ---------------------------------------------------------------------------
# cache

def text_key(text: str) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=_KEY_BYTES).digest()


def provider_key(provider_id: str) -> bytes:
    return hashlib.blake2b(provider_id.encode("utf-8"), digest_size=_PROVIDER_BYTES).digest()


class EmbeddingCache:
    """Append-only binary store of chunk embeddings.

    File layout: magic ``SDQE``, u16 version, u16 dimension, then fixed-size
    records of (32-byte text hash, 8-byte provider-id hash, dimension little-
    endian float32 values, 4-byte CRC32). Entries failing their checksum are
    treated as absent and counted in ``corrupt_entries``. Writers are
    serialized with a lock; reads are lock-free on the in-memory index.
    """

    def __init__(self, path: str, dimension: int = EMBEDDING_DIM):
        self.path = path
        self.dimension = dimension
        self.corrupt_entries = 0
        self._index: dict = {}
        self._lock = threading.Lock()
        self._record_size = _KEY_BYTES + _PROVIDER_BYTES + dimension * 4 + _CHECKSUM_BYTES
        if os.path.exists(path) and os.path.getsize(path) > 0:
            self._load()
        else:
            with open(path, "wb") as fh:
                fh.write(CACHE_MAGIC)
                fh.write(struct.pack("<HH", CACHE_VERSION, dimension))
        self._appender = open(path, "ab")

    def _load(self) -> None:
        with open(self.path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 8 or blob[:4] != CACHE_MAGIC:
            raise EmbeddingError(f"{self.path}: not an embedding cache")
        version, dim = struct.unpack_from("<HH", blob, 4)
        if version != CACHE_VERSION:
            raise EmbeddingError(f"{self.path}: unsupported cache version {version}")
        if dim != self.dimension:
            raise EmbeddingError(f"{self.path}: cache dimension {dim} != {self.dimension}")
        offset = 8
        vec_bytes = self.dimension * 4
        while offset + self._record_size <= len(blob):
            key = blob[offset : offset + _KEY_BYTES]
            pid = blob[offset + _KEY_BYTES : offset + _KEY_BYTES + _PROVIDER_BYTES]
            vstart = offset + _KEY_BYTES + _PROVIDER_BYTES
            raw = blob[vstart : vstart + vec_bytes]
            (stored_crc,) = struct.unpack_from("<I", blob, vstart + vec_bytes)
            if zlib.crc32(blob[offset : vstart + vec_bytes]) != stored_crc:
                self.corrupt_entries += 1
                log.warning("%s: checksum mismatch at offset %d, entry ignored",
                            self.path, offset)
            else:
                vec = np.frombuffer(raw, dtype="<f4").astype(np.float32)
                self._index[(key, pid)] = vec
            offset += self._record_size
        if offset != len(blob):
            self.corrupt_entries += 1
            log.warning("%s: %d trailing bytes ignored", self.path, len(blob) - offset)

    def get(self, provider_id: str, text: str):
        vec = self._index.get((text_key(text), provider_key(provider_id)))
        return None if vec is None else vec.copy()

    def put(self, provider_id: str, text: str, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dimension,):
            raise EmbeddingError(f"expected {self.dimension} dims, got {vec.shape}")
        key = text_key(text)
        pid = provider_key(provider_id)
        body = key + pid + vec.astype("<f4").tobytes()
        record = body + struct.pack("<I", zlib.crc32(body))
        with self._lock:
            self._appender.write(record)
            self._appender.flush()
            self._index[(key, pid)] = vec.copy()

    def __len__(self) -> int:
        return len(self._index)

    def close(self) -> None:
        self._appender.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# pipeline

def embed_text(text: str, provider: EmbeddingProvider, cache: EmbeddingCache = None) -> np.ndarray:
    """Embed a document: normalize, segment, pack to the provider's budget,
    embed each chunk (through the cache when one is given), mean-pool.

    A text fitting a single chunk returns that chunk's vector unchanged, so
    short inputs reproduce provider.embed_chunk exactly.
    """
    sentences = segment_sentences(text)
    if not sentences:
        raise EmbeddingError("cannot embed empty text")
    plan = pack_chunks(sentences, provider.token_budget)
    vectors = []
    for idx, chunk in enumerate(plan.chunks):
        vec = cache.get(provider.provider_id, chunk) if cache is not None else None
        if vec is None:
            try:
                vec = provider.embed_chunk(chunk)
            except EmbeddingError as exc:
                raise EmbeddingError(f"chunk {idx}: {exc}") from exc
            except Exception as exc:
                raise EmbeddingError(f"chunk {idx}: provider failure: {exc}") from exc
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (provider.dimension,):
                raise EmbeddingError(
                    f"chunk {idx}: expected {provider.dimension} dims, got {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"chunk {idx}: non-finite embedding")
            if cache is not None:
                cache.put(provider.provider_id, chunk, vec)
        vectors.append(vec)
    if len(vectors) == 1:
        return vectors[0]
    return np.mean(np.stack(vectors), axis=0).astype(np.float32)
