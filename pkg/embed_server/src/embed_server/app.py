"""The embedding service: POST /embed, GET /info, GET /health.

Request handling is concurrent; model inference is serialized through a
bounded worker pool. The model loads in the background after startup, and
/health and /embed answer 503 until it is warm, so load balancers never
route traffic to a cold instance. /info serves static metadata at any time.
"""
import asyncio
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from typing import List

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, StrictStr

from .backends import BackendError, EncoderBackend
from .chunking import normalize_whitespace, plan_chunks
from .config import ServerConfig, build_backend


class EmbedRequest(BaseModel):
    texts: List[StrictStr]


def _embed_texts(backend: EncoderBackend, texts) -> tuple:
    """One (n, dim) float32 matrix and per-text chunked flags.

    A text within the token limit embeds directly; a longer one is
    sentence-chunked through the backend's tokenizer and mean-pooled,
    single-chunk results passing through unchanged.
    """
    embeddings = np.empty((len(texts), backend.dimension), dtype=np.float32)
    chunked = []
    for i, text in enumerate(texts):
        if backend.count_tokens(text) <= backend.max_tokens:
            chunks = [text]
        else:
            chunks = plan_chunks(text, backend.count_tokens,
                                 backend.max_tokens)
        vectors = backend.embed_batch(chunks)
        embeddings[i] = vectors[0] if len(chunks) == 1 \
            else np.mean(vectors, axis=0).astype(np.float32)
        chunked.append(len(chunks) > 1)
    return embeddings, chunked


def create_app(config: ServerConfig = None,
               backend: EncoderBackend = None) -> FastAPI:
    """Build the service around a backend (constructed from config when not
    given). The backend's metadata must be valid before load()."""
    if config is None:
        config = ServerConfig()
    if backend is None:
        backend = build_backend(config)

    ready = threading.Event()
    state = {"error": None}

    def _load():
        try:
            backend.load()
        except Exception as exc:
            state["error"] = f"{exc}"
        else:
            ready.set()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.pool = ThreadPoolExecutor(
            max_workers=config.workers, thread_name_prefix="encoder")
        loader = threading.Thread(target=_load, daemon=True)
        loader.start()
        try:
            yield
        finally:
            app.state.pool.shutdown(wait=False)

    app = FastAPI(title="embedding service", lifespan=lifespan)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"detail": "malformed request body"})

    @app.get("/info")
    async def info():
        return {"model_id": backend.model_id,
                "dimension": backend.dimension,
                "max_tokens": backend.max_tokens,
                "revision": backend.revision}

    @app.get("/health")
    async def health():
        if state["error"] is not None:
            raise HTTPException(503, f"model failed to load: {state['error']}")
        if not ready.is_set():
            raise HTTPException(503, "model is loading")
        return {"status": "ok"}

    @app.post("/embed")
    async def embed(request: EmbedRequest):
        if state["error"] is not None:
            raise HTTPException(503, f"model failed to load: {state['error']}")
        if not ready.is_set():
            raise HTTPException(503, "model is loading")
        texts = request.texts
        if len(texts) > config.max_texts:
            raise HTTPException(
                413, f"{len(texts)} texts exceed the per-request limit "
                     f"of {config.max_texts}")
        for i, text in enumerate(texts):
            if len(text.encode("utf-8")) > config.max_text_bytes:
                raise HTTPException(
                    413, f"text {i} exceeds {config.max_text_bytes} bytes")
            if not normalize_whitespace(text):
                raise HTTPException(400, f"text {i} is empty")
        if not texts:
            return {"embeddings": [], "model_id": backend.model_id,
                    "chunked": []}
        loop = asyncio.get_running_loop()
        try:
            embeddings, chunked = await loop.run_in_executor(
                app.state.pool, _embed_texts, backend, texts)
        except BackendError as exc:
            raise HTTPException(500, f"embedding failed: {exc}")
        return {"embeddings": embeddings.tolist(),
                "model_id": backend.model_id,
                "chunked": chunked}

    return app
