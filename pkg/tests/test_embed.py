"""Sentence segmentation, chunk packing, stub embedder, cache, providers."""
import json
import math
import threading
import zlib
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdqp.embed import (EMBEDDING_DIM, DeterministicStubProvider,
                        EmbeddingCache, EmbeddingError, RemoteProvider,
                        deterministic_test_embedder, embed_text,
                        normalize_whitespace, pack_chunks, proxy_token_count,
                        segment_sentences)


# ---------------------------------------------------------------------------
# segmentation

def test_whitespace_normalization():
    assert normalize_whitespace("a\t b\n\nc  d") == "a b c d"


def test_basic_sentence_split():
    text = "First sentence. Second one! Third? Done."
    assert segment_sentences(text) == ["First sentence.", "Second one!",
                                       "Third?", "Done."]


def test_abbreviations_do_not_split():
    text = "Smith et al. showed X. We agree with Fig. 3 here."
    assert segment_sentences(text) == ["Smith et al. showed X.",
                                       "We agree with Fig. 3 here."]


def test_lowercase_follower_does_not_split():
    assert segment_sentences("we tested v1.2 of the system. It worked.") == \
        ["we tested v1.2 of the system.", "It worked."]


def test_closing_quote_stays_with_sentence():
    text = 'He said "stop." Then we left.'
    assert segment_sentences(text) == ['He said "stop."', "Then we left."]


def test_empty_and_whitespace_only():
    assert segment_sentences("") == []
    assert segment_sentences("  \n\t ") == []


_sentence_texts = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd", "Zs")),
    min_size=0, max_size=200)


@settings(max_examples=200)
@given(_sentence_texts)
def test_segmentation_join_reproduces_normalized_text(text):
    normalized = normalize_whitespace(text)
    assert " ".join(segment_sentences(text)) == normalized


def test_segmentation_join_with_punctuation():
    texts = ["A b. C d! E? F.", "No terminal punctuation here",
             "Multiple...   dots. Then? more!"]
    for text in texts:
        assert " ".join(segment_sentences(text)) == normalize_whitespace(text)


# ---------------------------------------------------------------------------
# token counting and packing

def test_proxy_token_count():
    assert proxy_token_count("") == 0
    assert proxy_token_count("one") == math.ceil(1.3)
    assert proxy_token_count("a b c d") == math.ceil(4 * 1.3)


def test_pack_greedy_boundaries():
    # joined counts: "a b. c d." has 4 words -> ceil(5.2) = 6 proxy tokens
    sentences = ["a b.", "c d.", "e f.", "g h."]
    plan = pack_chunks(sentences, token_budget=6)
    assert plan.chunks == ("a b. c d.", "e f. g h.")
    assert plan.over_budget == (False, False)


def test_pack_oracle_trace():
    # greedy reference computed independently on the joined-string counts
    sentences = [(f"w{i} " * (i + 1)).strip() + "." for i in range(1, 6)]
    budget = 9
    expected = []
    current = ""
    for s in sentences:
        candidate = s if not current else current + " " + s
        if proxy_token_count(candidate) <= budget:
            current = candidate
            continue
        if current:
            expected.append(current)
        current = s if proxy_token_count(s) <= budget else ""
        if not current:
            expected.append(s)
    if current:
        expected.append(current)
    plan = pack_chunks(sentences, token_budget=budget)
    assert list(plan.chunks) == expected


def test_pack_flags_over_budget_sentence():
    sentences = ["short one.", "this sentence has far too many words to fit."]
    plan = pack_chunks(sentences, token_budget=5)
    assert plan.chunks == ("short one.", sentences[1])
    assert plan.over_budget == (False, True)


@settings(max_examples=150)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=20), st.integers(4, 40))
def test_pack_reconcat_property(word_counts, budget):
    sentences = [" ".join(f"t{i}w{j}" for j in range(k)) + "."
                 for i, k in enumerate(word_counts)]
    plan = pack_chunks(sentences, token_budget=budget)
    assert " ".join(plan.chunks) == " ".join(sentences)
    for chunk, flagged in zip(plan.chunks, plan.over_budget):
        if flagged:
            assert chunk in sentences
            assert proxy_token_count(chunk) > budget
        else:
            assert proxy_token_count(chunk) <= budget


# ---------------------------------------------------------------------------
# stub provider

def test_stub_is_deterministic():
    a = deterministic_test_embedder(seed=0)
    b = deterministic_test_embedder(seed=0)
    va = a.embed_chunk("graph neural networks")
    vb = b.embed_chunk("graph neural networks")
    np.testing.assert_array_equal(va, vb)
    assert va.dtype == np.float32
    assert va.shape == (EMBEDDING_DIM,)


def test_stub_seed_changes_vectors():
    a = deterministic_test_embedder(seed=0)
    b = deterministic_test_embedder(seed=1)
    assert not np.allclose(a.embed_chunk("token"), b.embed_chunk("token"))
    assert a.provider_id != b.provider_id


def test_stub_vectors_unit_norm():
    provider = deterministic_test_embedder()
    for text in ("one", "two words here", "x " * 50):
        assert np.linalg.norm(provider.embed_chunk(text)) == pytest.approx(1.0, abs=1e-5)


def test_stub_shared_tokens_raise_similarity():
    provider = deterministic_test_embedder()
    rng = np.random.default_rng(0)
    wins = 0
    trials = 100
    for t in range(trials):
        base = [f"w{t}_{i}" for i in range(8)]
        overlap = base[:4] + [f"o{t}_{i}" for i in range(4)]
        disjoint = [f"d{t}_{i}" for i in range(8)]
        va = provider.embed_chunk(" ".join(base))
        vb = provider.embed_chunk(" ".join(overlap))
        vc = provider.embed_chunk(" ".join(disjoint))
        if float(va @ vb) > float(va @ vc):
            wins += 1
    assert wins >= 95


def test_stub_rejects_empty_chunk():
    provider = deterministic_test_embedder()
    with pytest.raises(EmbeddingError):
        provider.embed_chunk("   ")


# ---------------------------------------------------------------------------
# cache

def test_cache_round_trip(tmp_path):
    provider = deterministic_test_embedder()
    path = tmp_path / "cache.bin"
    with EmbeddingCache(path, dimension=EMBEDDING_DIM) as cache:
        vec = provider.embed_chunk("hello world")
        cache.put(provider.provider_id, "hello world", vec)
        out = cache.get(provider.provider_id, "hello world")
        np.testing.assert_array_equal(out, vec)
    with EmbeddingCache(path, dimension=EMBEDDING_DIM) as cache:
        out = cache.get(provider.provider_id, "hello world")
        np.testing.assert_array_equal(out, vec)
        assert cache.get("other-provider", "hello world") is None
        assert cache.get(provider.provider_id, "other text") is None


def test_cache_record_size_arithmetic(tmp_path):
    path = tmp_path / "cache.bin"
    provider = deterministic_test_embedder()
    with EmbeddingCache(path, dimension=EMBEDDING_DIM) as cache:
        for i in range(3):
            cache.put(provider.provider_id, f"text {i}",
                      provider.embed_chunk(f"text {i}"))
    header = 4 + 2 + 2
    record = 32 + 8 + EMBEDDING_DIM * 4 + 4
    assert path.stat().st_size == header + 3 * record


def test_cache_detects_corruption(tmp_path, caplog):
    path = tmp_path / "cache.bin"
    provider = deterministic_test_embedder()
    with EmbeddingCache(path, dimension=EMBEDDING_DIM) as cache:
        cache.put(provider.provider_id, "aaa", provider.embed_chunk("aaa"))
        cache.put(provider.provider_id, "bbb", provider.embed_chunk("bbb"))
    blob = bytearray(path.read_bytes())
    blob[8 + 32 + 8 + 10] ^= 0xFF  # flip a byte inside the first vector
    path.write_bytes(bytes(blob))
    with EmbeddingCache(path, dimension=EMBEDDING_DIM) as cache:
        assert cache.corrupt_entries == 1
        assert cache.get(provider.provider_id, "aaa") is None
        assert cache.get(provider.provider_id, "bbb") is not None


def test_cache_rejects_wrong_dimension(tmp_path):
    path = tmp_path / "cache.bin"
    with EmbeddingCache(path, dimension=768):
        pass
    with pytest.raises(EmbeddingError):
        EmbeddingCache(path, dimension=512)


def test_cache_rejects_bad_magic(tmp_path):
    path = tmp_path / "cache.bin"
    path.write_bytes(b"XXXX\x01\x00\x00\x03")
    with pytest.raises(EmbeddingError):
        EmbeddingCache(path, dimension=768)


# ---------------------------------------------------------------------------
# embed_text pipeline

def test_single_chunk_returned_unchanged(stub_provider):
    text = "A short sentence."
    direct = stub_provider.embed_chunk("A short sentence.")
    np.testing.assert_array_equal(embed_text(text, stub_provider), direct)


def test_multi_chunk_mean(stub_provider):
    provider = DeterministicStubProvider(seed=0, token_budget=4)
    text = "One one one. Two two two."
    out = embed_text(text, provider)
    c1 = provider.embed_chunk("One one one.")
    c2 = provider.embed_chunk("Two two two.")
    np.testing.assert_allclose(out, (c1 + c2) / 2.0, rtol=1e-6)


def test_embed_text_uses_cache(tmp_path, stub_provider):
    calls = []

    class Counting(DeterministicStubProvider):
        def embed_chunk(self, chunk):
            calls.append(chunk)
            return super().embed_chunk(chunk)

    provider = Counting(seed=0)
    with EmbeddingCache(tmp_path / "c.bin", dimension=EMBEDDING_DIM) as cache:
        first = embed_text("Cached sentence here.", provider, cache)
        assert len(calls) == 1
        second = embed_text("Cached sentence here.", provider, cache)
        assert len(calls) == 1
        np.testing.assert_array_equal(first, second)


def test_embed_text_rejects_empty(stub_provider):
    with pytest.raises(EmbeddingError):
        embed_text("", stub_provider)


def test_embed_text_validates_provider_output():
    class Broken(DeterministicStubProvider):
        def embed_chunk(self, chunk):
            return np.zeros(3, dtype=np.float32)

    with pytest.raises(EmbeddingError, match="dims"):
        embed_text("Some text.", Broken(seed=0))


def test_embed_text_rejects_nonfinite_vectors():
    class Nan(DeterministicStubProvider):
        def embed_chunk(self, chunk):
            out = super().embed_chunk(chunk)
            out[0] = np.nan
            return out

    with pytest.raises(EmbeddingError, match="non-finite"):
        embed_text("Some text.", Nan(seed=0))


# ---------------------------------------------------------------------------
# remote provider against a local mock

class _EmbedHandler(BaseHTTPRequestHandler):
    dimension = 8
    fail_first = 0

    def do_GET(self):
        if self.path == "/info":
            payload = json.dumps({"model_id": "mock-encoder",
                                  "dimension": self.dimension,
                                  "max_tokens": 16,
                                  "revision": "r1"}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        else:
            self.send_response(404)
            self.end_headers()

    def do_POST(self):
        cls = type(self)
        if cls.fail_first > 0:
            cls.fail_first -= 1
            self.send_response(503)
            self.end_headers()
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        vectors = []
        for text in body["texts"]:
            rng = np.random.default_rng(abs(hash(text)) % (2 ** 31))
            vec = rng.standard_normal(self.dimension)
            vectors.append((vec / np.linalg.norm(vec)).tolist())
        payload = json.dumps({"embeddings": vectors,
                              "model_id": "mock-encoder",
                              "chunked": [False] * len(vectors)}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_server():
    _EmbedHandler.fail_first = 0
    server = ThreadingHTTPServer(("127.0.0.1", 0), _EmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_remote_provider_reads_info(embed_server):
    provider = RemoteProvider(embed_server)
    assert provider.dimension == 8
    assert provider.token_budget == 16
    assert provider.provider_id == "remote:mock-encoder@r1"


def test_remote_provider_embeds(embed_server):
    provider = RemoteProvider(embed_server)
    vec = provider.embed_chunk("hello")
    assert vec.shape == (8,)
    np.testing.assert_array_equal(vec, provider.embed_chunk("hello"))


def test_remote_provider_retries_503(embed_server):
    provider = RemoteProvider(embed_server, retries=3, backoff=0.01)
    _EmbedHandler.fail_first = 2
    vec = provider.embed_chunk("after retries")
    assert vec.shape == (8,)


def test_remote_provider_unreachable():
    with pytest.raises(EmbeddingError):
        RemoteProvider("http://127.0.0.1:9", retries=0, timeout=1)
