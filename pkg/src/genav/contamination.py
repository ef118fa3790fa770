"""Train/benchmark overlap audit.

Lexical metrics work on word n-grams after a fixed tokenization: lowercase,
split on Unicode whitespace, delete punctuation characters, drop empty tokens.
Pool lookups go through an inverted index keyed by a 64-bit n-gram hash; every
hit is re-checked against the raw n-gram sets, so hash collisions cannot
inflate a score.
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NGRAM_SIZES = (5, 8, 13)
CONTAINMENT_FLAG = 0.70
COSINE_FLAG = 0.8


def _strip_punct(token: str) -> str:
    return "".join(ch for ch in token if not unicodedata.category(ch).startswith("P"))


def tokenize(text: str) -> list[str]:
    tokens = (_strip_punct(tok) for tok in text.lower().split())
    return [tok for tok in tokens if tok]


def ngrams(tokens: Sequence[str], n: int) -> frozenset[tuple[str, ...]]:
    return frozenset(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class NGramProfile:
    text: str
    tokens: tuple[str, ...]
    grams: dict[int, frozenset] = field(compare=False)

    @classmethod
    def of(cls, text: str, sizes: Iterable[int] = NGRAM_SIZES) -> NGramProfile:
        toks = tuple(tokenize(text))
        return cls(text, toks, {n: ngrams(toks, n) for n in sizes})

    def get(self, n: int) -> frozenset:
        if n not in self.grams:
            self.grams[n] = ngrams(self.tokens, n)
        return self.grams[n]


def _profile(x: str | NGramProfile) -> NGramProfile:
    return x if isinstance(x, NGramProfile) else NGramProfile.of(x)


def jaccard(a: str | NGramProfile, b: str | NGramProfile, n: int = 5) -> float:
    ga, gb = _profile(a).get(n), _profile(b).get(n)
    union = len(ga | gb)
    return len(ga & gb) / union if union else 0.0


def jaccard5(a: str | NGramProfile, b: str | NGramProfile) -> float:
    return jaccard(a, b, 5)


def containment(bench: str | NGramProfile, train: str | NGramProfile, n: int = 5) -> float:
    """Fraction of the benchmark text's n-grams found in the training text."""
    ga = _profile(bench).get(n)
    if not ga:
        raise ValueError(f"benchmark text has no {n}-grams (fewer than {n} tokens)")
    return len(ga & _profile(train).get(n)) / len(ga)


def ngram_hash(gram: tuple[str, ...]) -> int:
    digest = hashlib.blake2b("\x1f".join(gram).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class NGramIndex:
    """Inverted index from n-gram hash to the pool entries containing it."""

    def __init__(self, pool: Sequence[str], n: int):
        self.n = n
        self.profiles = [NGramProfile.of(text, (n,)) for text in pool]
        self._postings: dict[int, set[int]] = defaultdict(set)
        for doc_id, prof in enumerate(self.profiles):
            for gram in prof.get(n):
                self._postings[ngram_hash(gram)].add(doc_id)

    def candidates(self, grams: Iterable[tuple[str, ...]]) -> set[int]:
        hits: set[int] = set()
        for gram in grams:
            hits |= self._postings.get(ngram_hash(gram), set())
        return hits

    def shared(self, grams: frozenset, doc_id: int) -> int:
        return len(grams & self.profiles[doc_id].get(self.n))

    def nearest(self, bench: str | NGramProfile, metric: str = "containment") -> tuple[float, str | None]:
        """Best pool match under ``containment`` or ``jaccard``.

        Ties resolve to the lexicographically smallest pool text so the answer
        does not depend on pool order. Returns ``(0.0, None)`` without overlap.
        """
        prof = _profile(bench)
        grams = prof.get(self.n)
        best, best_text = 0.0, None
        for doc_id in self.candidates(grams):
            common = self.shared(grams, doc_id)
            if common == 0:  # hash collision only
                continue
            other = self.profiles[doc_id].get(self.n)
            if metric == "containment":
                score = common / len(grams)
            elif metric == "jaccard":
                score = common / len(grams | other)
            else:
                raise ValueError(f"unknown metric {metric!r}")
            text = self.profiles[doc_id].text
            if score > best or (score == best and best_text is not None and text < best_text):
                best, best_text = score, text
        return best, best_text


def _index(pool: Sequence[str] | NGramIndex, n: int) -> NGramIndex:
    if isinstance(pool, NGramIndex):
        if pool.n != n:
            raise ValueError(f"index built for n={pool.n}, need n={n}")
        return pool
    return NGramIndex(pool, n)


def flag_8gram(
    benchmark: str, pool: Sequence[str] | NGramIndex, threshold: float = CONTAINMENT_FLAG
) -> tuple[bool, str | None, float]:
    """Flag when some pool prompt contains >= ``threshold`` of the benchmark's 8-grams.

    Returns (flagged, nearest pool prompt, max containment). Benchmarks shorter
    than 8 tokens have no 8-grams and are never flagged.
    """
    prof = NGramProfile.of(benchmark, (8,))
    if not prof.get(8):
        return False, None, 0.0
    score, nearest = _index(pool, 8).nearest(prof, "containment")
    return score >= threshold, nearest, score


def collide_13gram(benchmark: str, pool: Sequence[str] | NGramIndex) -> bool:
    prof = NGramProfile.of(benchmark, (13,))
    grams = prof.get(13)
    if not grams:
        return False
    index = _index(pool, 13)
    return any(index.shared(grams, d) > 0 for d in index.candidates(grams))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero vector cannot be normalized")
    if np.all(np.abs(norms - 1.0) <= 1e-6):
        return m
    return m / norms


@dataclass(frozen=True)
class CosineScreen:
    max_similarity: np.ndarray
    nearest: np.ndarray
    flags: np.ndarray


def cosine_screen(bench_vectors, pool_vectors, threshold: float = COSINE_FLAG) -> CosineScreen:
    """Max cosine similarity of each benchmark vector against the pool."""
    b, p = _unit_rows(bench_vectors), _unit_rows(pool_vectors)
    if b.shape[1] != p.shape[1]:
        raise ValueError(f"dimension mismatch: {b.shape[1]} vs {p.shape[1]}")
    sims = np.clip(b @ p.T, -1.0, 1.0)
    nearest = sims.argmax(axis=1)
    best = sims[np.arange(len(b)), nearest]
    return CosineScreen(best, nearest, best >= threshold)


def audit(
    bench: Sequence[str],
    pool: Sequence[str],
    bench_vectors=None,
    pool_vectors=None,
    containment_threshold: float = CONTAINMENT_FLAG,
    cosine_threshold: float = COSINE_FLAG,
) -> dict:
    """Per-benchmark-prompt metrics against the pool plus flag summaries.

    Metrics that need more tokens than a prompt has are reported as None.
    """
    idx5, idx8, idx13 = NGramIndex(pool, 5), NGramIndex(pool, 8), NGramIndex(pool, 13)
    rows = []
    for i, text in enumerate(bench):
        prof = NGramProfile.of(text)
        has5, has8, has13 = bool(prof.get(5)), bool(prof.get(8)), bool(prof.get(13))
        jac5 = idx5.nearest(prof, "jaccard")[0] if has5 else None
        con5 = idx5.nearest(prof, "containment")[0] if has5 else None
        con8, near8 = idx8.nearest(prof, "containment") if has8 else (None, None)
        rows.append({
            "index": i,
            "tokens": len(prof.tokens),
            "jaccard5": jac5,
            "containment5": con5,
            "containment8": con8,
            "flag_8gram": bool(has8 and con8 >= containment_threshold),
            "nearest_8gram": near8,
            "collision13": bool(has13 and collide_13gram(text, idx13)),
        })
    report = {"n_bench": len(bench), "n_pool": len(pool), "rows": rows}
    if bench_vectors is not None and pool_vectors is not None:
        screen = cosine_screen(bench_vectors, pool_vectors, cosine_threshold)
        if len(screen.max_similarity) != len(bench):
            raise ValueError("benchmark vectors are not row-aligned with benchmark prompts")
        for row, sim, near, flag in zip(rows, screen.max_similarity, screen.nearest, screen.flags):
            row["cosine"] = float(sim)
            row["cosine_nearest"] = int(near)
            row["flag_cosine"] = bool(flag)
    report["summary"] = {
        "flag_8gram": sum(r["flag_8gram"] for r in rows),
        "collision13": sum(r["collision13"] for r in rows),
        "flag_cosine": sum(r.get("flag_cosine", False) for r in rows),
        "max_jaccard5": max((r["jaccard5"] for r in rows if r["jaccard5"] is not None), default=None),
        "max_containment5": max((r["containment5"] for r in rows if r["containment5"] is not None), default=None),
        "max_containment8": max((r["containment8"] for r in rows if r["containment8"] is not None), default=None),
    }
    return report
