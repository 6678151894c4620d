"""Deterministic subword-hashing text embedder.

Each word is wrapped in ``<`` and ``>`` and split into character n-grams
(3 to 5 characters). Every n-gram is hashed with 64-bit FNV-1a into one of
4096 buckets whose vectors are drawn once from a fixed seed. A text's vector
is the mean of its n-gram bucket vectors, L2-normalised.
"""
from __future__ import annotations

import re
from functools import lru_cache

import numpy as np

N_BUCKETS = 4096
MIN_N, MAX_N = 3, 5
BUCKET_SEED = 20230101
DEFAULT_WIDTH = 300

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF

_WORD = re.compile(r"\w+", re.UNICODE)


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def char_ngrams(word: str, min_n: int = MIN_N, max_n: int = MAX_N) -> list[str]:
    w = f"<{word}>"
    return [w[i:i + n] for n in range(min_n, max_n + 1) for i in range(len(w) - n + 1)]


def text_ngrams(content: str) -> list[str]:
    grams = []
    for word in _WORD.findall(content.lower()):
        grams.extend(char_ngrams(word))
    return grams


@lru_cache(maxsize=8)
def bucket_table(width: int, seed: int = BUCKET_SEED) -> np.ndarray:
    table = np.random.default_rng(seed).standard_normal((N_BUCKETS, width))
    table.setflags(write=False)
    return table


@lru_cache(maxsize=65536)
def _bucket(gram: str) -> int:
    return fnv1a_64(gram.encode("utf-8")) % N_BUCKETS


def embed_text(content: str, width: int = DEFAULT_WIDTH) -> np.ndarray:
    if width < 1:
        raise ValueError("width must be >= 1")
    grams = text_ngrams(content or "")
    if not grams:
        return np.zeros(width)
    idx = np.fromiter((_bucket(g) for g in grams), dtype=np.int64, count=len(grams))
    vec = bucket_table(width)[idx].mean(axis=0)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec
