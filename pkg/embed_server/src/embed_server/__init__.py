"""HTTP sidecar serving scientific-text embeddings.

Exposes a pretrained encoder behind a small JSON protocol (POST /embed,
GET /info, GET /health) with server-side sentence chunking through the
model's real tokenizer, mean-pooled back to one vector per input text.
"""
from .app import create_app
from .backends import BackendError, EncoderBackend, HashBackend, TransformersBackend
from .chunking import normalize_whitespace, plan_chunks, segment_sentences
from .config import ServerConfig, build_backend, load_server_config

__all__ = [
    "BackendError",
    "EncoderBackend",
    "HashBackend",
    "ServerConfig",
    "TransformersBackend",
    "build_backend",
    "create_app",
    "load_server_config",
    "normalize_whitespace",
    "plan_chunks",
    "segment_sentences",
]
