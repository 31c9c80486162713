"""Server configuration: backend choice, model pinning, request limits."""
from dataclasses import dataclass
from typing import Optional

from .backends import BackendError, EncoderBackend, HashBackend, TransformersBackend

MAX_TEXTS_PER_REQUEST = 64
MAX_TEXT_BYTES = 1 << 20


@dataclass(frozen=True)
class ServerConfig:
    backend: str = "transformers"
    model_id: str = "allenai/specter2_base"
    adapter: Optional[str] = "allenai/specter2"
    revision: str = "main"
    device: str = "cpu"
    dimension: int = 768
    max_tokens: int = 512
    workers: int = 2
    max_texts: int = MAX_TEXTS_PER_REQUEST
    max_text_bytes: int = MAX_TEXT_BYTES
    hash_seed: int = 0

    def __post_init__(self):
        if self.backend not in ("transformers", "hash"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.max_texts < 1 or self.max_text_bytes < 1:
            raise ValueError("request limits must be >= 1")


def load_server_config(path: str = None) -> ServerConfig:
    """Load config from YAML; defaults when no path is given."""
    if path is None:
        return ServerConfig()
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    known = set(ServerConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return ServerConfig(**data)


def build_backend(config: ServerConfig) -> EncoderBackend:
    if config.backend == "hash":
        return HashBackend(seed=config.hash_seed, dimension=config.dimension,
                           max_tokens=config.max_tokens)
    return TransformersBackend(model_id=config.model_id,
                               adapter=config.adapter,
                               revision=config.revision,
                               device=config.device,
                               dimension=config.dimension,
                               max_tokens=config.max_tokens)
