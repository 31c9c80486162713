"""Sentence segmentation and token-budget packing for long inputs.

A text that fits the model context embeds in one pass; longer texts split
into whole-sentence chunks counted by the backend's real tokenizer, and the
per-chunk vectors are mean-pooled by the caller. Joining the segmented
sentences with single spaces reproduces the whitespace-normalized input, so
chunking never drops or reorders content.
"""
import re

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
    followed by a lowercase continuation.
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


def plan_chunks(text: str, token_counter, token_budget: int) -> list:
    """Whole-sentence chunks, each within the token budget when possible.

    Greedy packing: keep appending sentences while the chunk stays within
    budget. A single sentence that alone exceeds the budget becomes its own
    chunk; the encoder truncates it, which loses less than dropping it.
    """
    if token_budget < 1:
        raise ValueError(f"token budget must be >= 1, got {token_budget}")
    chunks = []
    current = ""
    for sentence in segment_sentences(text):
        candidate = sentence if not current else current + " " + sentence
        if token_counter(candidate) <= token_budget:
            current = candidate
            continue
        if current:
            chunks.append(current)
            current = ""
        if token_counter(sentence) <= token_budget:
            current = sentence
        else:
            chunks.append(sentence)
    if current:
        chunks.append(current)
    return chunks
