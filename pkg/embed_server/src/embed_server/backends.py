"""Encoder backends behind the embedding service.

TransformersBackend wraps a pretrained scientific-text encoder (optionally
with a task adapter) and reads the first-token vector of the last hidden
layer. HashBackend is a deterministic stand-in whose per-token vectors come
from a counter-based generator keyed by (seed, token); it exists so the
whole protocol, chunking included, is testable offline.
"""
import hashlib
import threading
import time

import numpy as np


class BackendError(RuntimeError):
    """Raised when a backend cannot load or produce embeddings."""


class EncoderBackend:
    """Interface: metadata is static, inference happens after load().

    Attributes model_id, revision, dimension and max_tokens must be valid
    before load() so /info can serve while the model warms up.
    """

    model_id: str
    revision: str
    dimension: int
    max_tokens: int

    def load(self) -> None:
        raise NotImplementedError

    def count_tokens(self, text: str) -> int:
        raise NotImplementedError

    def embed_batch(self, texts) -> np.ndarray:
        """Embed a list of texts -> (n, dimension) float32 array."""
        raise NotImplementedError


class HashBackend(EncoderBackend):
    """Deterministic test encoder: L2-normalized mean of per-token vectors.

    Token vectors are drawn from a counter-based generator keyed by a hash
    of (seed, token), so the same (seed, text) embeds identically on every
    platform and texts sharing tokens land closer in cosine. Its tokenizer
    is whitespace splitting.
    """

    def __init__(self, seed: int = 0, dimension: int = 768,
                 max_tokens: int = 512, load_delay: float = 0.0):
        self.seed = int(seed)
        self.dimension = int(dimension)
        self.max_tokens = int(max_tokens)
        self.load_delay = float(load_delay)
        self.model_id = f"hash-encoder-{self.dimension}-{self.seed}"
        self.revision = "r1"
        self._token_vectors: dict = {}
        self._lock = threading.Lock()

    def load(self) -> None:
        if self.load_delay > 0:
            time.sleep(self.load_delay)

    def count_tokens(self, text: str) -> int:
        return len(text.split())

    def _token_vector(self, token: str) -> np.ndarray:
        with self._lock:
            cached = self._token_vectors.get(token)
        if cached is not None:
            return cached
        digest = hashlib.blake2b(f"{self.seed}\x1f{token}".encode("utf-8"),
                                 digest_size=16).digest()
        gen = np.random.Generator(np.random.Philox(
            key=int.from_bytes(digest, "little")))
        vec = gen.standard_normal(self.dimension)
        with self._lock:
            self._token_vectors[token] = vec
        return vec

    def embed_batch(self, texts) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float32)
        for i, text in enumerate(texts):
            tokens = text.split()[: self.max_tokens]
            if not tokens:
                raise BackendError(f"text {i} has no tokens")
            mean = np.mean([self._token_vector(t) for t in tokens], axis=0)
            norm = float(np.linalg.norm(mean))
            if norm == 0.0:
                raise BackendError(f"text {i}: degenerate zero-norm vector")
            out[i] = (mean / norm).astype(np.float32)
        return out


class TransformersBackend(EncoderBackend):
    """Pretrained encoder loaded through the transformers library.

    The embedding is the first-token vector of the last hidden layer, in
    inference mode at a pinned revision, so identical inputs yield identical
    vectors. Loading an adapter needs the optional 'adapters' package.
    """

    def __init__(self, model_id: str, adapter: str = None,
                 revision: str = "main", device: str = "cpu",
                 dimension: int = 768, max_tokens: int = 512):
        self.model_id = model_id
        self.adapter = adapter
        self.revision = revision
        self.device = device
        self.dimension = int(dimension)
        self.max_tokens = int(max_tokens)
        self._tokenizer = None
        self._model = None
        self._torch = None

    def load(self) -> None:
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackendError(
                "the transformers backend needs torch and transformers "
                "installed (pip install 'embed-server[model]')") from exc
        tokenizer = AutoTokenizer.from_pretrained(self.model_id,
                                                  revision=self.revision)
        model = AutoModel.from_pretrained(self.model_id,
                                          revision=self.revision)
        if self.adapter:
            try:
                import adapters
            except ImportError as exc:
                raise BackendError(
                    f"loading adapter {self.adapter!r} needs the 'adapters' "
                    "package") from exc
            adapters.init(model)
            name = model.load_adapter(self.adapter, set_active=True)
            model.set_active_adapters(name)
        hidden = int(model.config.hidden_size)
        if hidden != self.dimension:
            raise BackendError(
                f"model hidden size {hidden} does not match the configured "
                f"dimension {self.dimension}")
        model.eval()
        model.to(self.device)
        self._tokenizer = tokenizer
        self._model = model
        self._torch = torch

    def count_tokens(self, text: str) -> int:
        if self._tokenizer is None:
            raise BackendError("backend not loaded")
        return len(self._tokenizer.encode(text, add_special_tokens=True,
                                          truncation=False))

    def embed_batch(self, texts) -> np.ndarray:
        if self._model is None:
            raise BackendError("backend not loaded")
        encoded = self._tokenizer(list(texts), padding=True, truncation=True,
                                  max_length=self.max_tokens,
                                  return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            output = self._model(**encoded)
        first_token = output.last_hidden_state[:, 0, :]
        return first_token.cpu().numpy().astype(np.float32)
