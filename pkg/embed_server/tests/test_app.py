"""Endpoint behavior: shapes, limits, warm-up gating, chunk self-consistency."""
import random
import threading
import time

import numpy as np
import pytest

pytest.importorskip("embed_server")
pytest.importorskip("fastapi")

from fastapi.testclient import TestClient

from embed_server import (BackendError, HashBackend, ServerConfig,
                          create_app, load_server_config)
from embed_server.chunking import plan_chunks


def _wait_ready(client, timeout: float = 10.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if client.get("/health").status_code == 200:
            return
        time.sleep(0.01)
    raise RuntimeError("server never became healthy")


@pytest.fixture(scope="module")
def backend():
    return HashBackend(seed=0, dimension=768, max_tokens=512)


@pytest.fixture(scope="module")
def client(backend):
    config = ServerConfig(backend="hash", workers=2)
    app = create_app(config, backend)
    with TestClient(app) as client:
        _wait_ready(client)
        yield client


def _long_text(n_words: int, words_per_sentence: int = 40, seed: int = 11) -> str:
    """Sentences of hash-friendly words; capitalized leads keep boundaries."""
    rng = random.Random(seed)
    words = [f"w{rng.randrange(500)}" for _ in range(n_words)]
    sentences = []
    for start in range(0, n_words, words_per_sentence):
        group = words[start : start + words_per_sentence]
        group[0] = group[0].capitalize()
        sentences.append(" ".join(group) + ".")
    return " ".join(sentences)


# ---------------------------------------------------------------------------
# metadata and health


def test_info_fields(client):
    body = client.get("/info").json()
    assert body == {"model_id": "hash-encoder-768-0", "dimension": 768,
                    "max_tokens": 512, "revision": "r1"}


def test_info_idempotent(client):
    first = client.get("/info")
    second = client.get("/info")
    assert first.content == second.content


def test_health_after_warmup(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_endpoints_503_until_model_loads():
    gate = threading.Event()

    class Gated(HashBackend):
        def load(self):
            if not gate.wait(timeout=10.0):
                raise BackendError("gate never opened")

    app = create_app(ServerConfig(backend="hash"), Gated(seed=0))
    with TestClient(app) as client:
        assert client.get("/health").status_code == 503
        assert client.post("/embed",
                           json={"texts": ["hello"]}).status_code == 503
        # static metadata serves while the model warms up
        assert client.get("/info").status_code == 200
        gate.set()
        _wait_ready(client)
        assert client.post("/embed",
                           json={"texts": ["hello"]}).status_code == 200


def test_load_failure_keeps_serving_503():
    class Broken(HashBackend):
        def load(self):
            raise BackendError("weights missing")

    app = create_app(ServerConfig(backend="hash"), Broken(seed=0))
    with TestClient(app) as client:
        deadline = time.monotonic() + 5.0
        while time.monotonic() < deadline:
            response = client.get("/health")
            assert response.status_code == 503
            if "weights missing" in response.json()["detail"]:
                break
            time.sleep(0.01)
        else:
            raise AssertionError("load failure never surfaced")
        assert client.post("/embed",
                           json={"texts": ["hello"]}).status_code == 503


# ---------------------------------------------------------------------------
# embedding contract


def test_single_text_shape(client):
    body = client.post("/embed", json={"texts": ["hello world"]}).json()
    assert len(body["embeddings"]) == 1
    assert len(body["embeddings"][0]) == 768
    assert body["chunked"] == [False]
    assert body["model_id"] == "hash-encoder-768-0"
    assert all(np.isfinite(body["embeddings"][0]))


def test_response_lengths_match_request(client):
    texts = [f"text number {i}" for i in range(7)]
    body = client.post("/embed", json={"texts": texts}).json()
    assert len(body["embeddings"]) == 7
    assert len(body["chunked"]) == 7


def test_duplicate_texts_in_batch_identical(client):
    body = client.post(
        "/embed", json={"texts": ["same text", "same text"]}).json()
    assert body["embeddings"][0] == body["embeddings"][1]


def test_batch_matches_single(client):
    single = client.post("/embed", json={"texts": ["alpha beta"]}).json()
    batch = client.post(
        "/embed", json={"texts": ["other words", "alpha beta"]}).json()
    assert batch["embeddings"][1] == single["embeddings"][0]


def test_identical_requests_identical_bodies(client):
    payload = {"texts": ["one two three", "four five"]}
    first = client.post("/embed", json=payload)
    second = client.post("/embed", json=payload)
    assert first.content == second.content


def test_empty_batch(client):
    body = client.post("/embed", json={"texts": []}).json()
    assert body["embeddings"] == []
    assert body["chunked"] == []


def test_short_text_not_chunked(client, backend):
    text = _long_text(500)
    assert backend.count_tokens(text) <= backend.max_tokens
    body = client.post("/embed", json={"texts": [text]}).json()
    assert body["chunked"] == [False]


def test_long_text_chunk_self_consistency(client, backend):
    text = _long_text(10_000)
    body = client.post("/embed", json={"texts": [text]}).json()
    assert body["chunked"] == [True]
    vector = np.asarray(body["embeddings"][0], dtype=np.float32)

    # recompute the mean from per-chunk /embed calls
    chunks = plan_chunks(text, backend.count_tokens, backend.max_tokens)
    assert len(chunks) > 1
    assert all(backend.count_tokens(c) <= backend.max_tokens for c in chunks)
    parts = []
    for chunk in chunks:
        part = client.post("/embed", json={"texts": [chunk]}).json()
        assert part["chunked"] == [False]
        parts.append(np.asarray(part["embeddings"][0], dtype=np.float32))
    expected = np.mean(np.stack(parts), axis=0).astype(np.float32)
    assert np.array_equal(vector, expected)


# ---------------------------------------------------------------------------
# request validation


def test_malformed_json_is_400(client):
    response = client.post("/embed", content="{not json",
                           headers={"content-type": "application/json"})
    assert response.status_code == 400


def test_wrong_content_type_is_400(client):
    response = client.post("/embed", content='{"texts": ["ok"]}',
                           headers={"content-type": "text/plain"})
    assert response.status_code == 400


def test_missing_texts_key_is_400(client):
    assert client.post("/embed", json={"inputs": ["x"]}).status_code == 400


def test_non_list_texts_is_400(client):
    assert client.post("/embed", json={"texts": "just a string"}).status_code == 400


def test_non_string_element_is_400(client):
    assert client.post("/embed", json={"texts": [42]}).status_code == 400


def test_blank_text_is_400(client):
    response = client.post("/embed", json={"texts": ["fine", "  \t "]})
    assert response.status_code == 400
    assert "text 1" in response.json()["detail"]


def test_too_many_texts_is_413(client):
    response = client.post("/embed", json={"texts": ["x"] * 65})
    assert response.status_code == 413
    assert client.post("/embed",
                       json={"texts": ["x"] * 64}).status_code == 200


def test_oversize_text_is_413(client):
    big = "a" * ((1 << 20) + 1)
    response = client.post("/embed", json={"texts": [big]})
    assert response.status_code == 413
    assert "text 0" in response.json()["detail"]


# ---------------------------------------------------------------------------
# configuration


def test_config_yaml_round_trip(tmp_path):
    path = tmp_path / "server.yaml"
    path.write_text("backend: hash\nworkers: 3\nrevision: abc123\n",
                    encoding="utf-8")
    config = load_server_config(str(path))
    assert config.backend == "hash"
    assert config.workers == 3
    assert config.revision == "abc123"
    assert config.dimension == 768


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "server.yaml"
    path.write_text("backend: hash\nport: 9000\n", encoding="utf-8")
    with pytest.raises(ValueError, match="port"):
        load_server_config(str(path))


def test_config_rejects_unknown_backend():
    with pytest.raises(ValueError, match="backend"):
        ServerConfig(backend="onnx")
