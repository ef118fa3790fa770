import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import genav.contamination as cm
from genav.contamination import (
    NGramIndex,
    NGramProfile,
    audit,
    collide_13gram,
    containment,
    cosine_screen,
    flag_8gram,
    jaccard5,
    ngrams,
    tokenize,
)


def words(a, b):
    return " ".join(f"w{i}" for i in range(a, b + 1))


def brute_ngrams(tokens, n):
    out = set()
    for i in range(len(tokens)):
        if i + n <= len(tokens):
            out.add(tuple(tokens[i : i + n]))
    return out


def test_tokenize():
    assert tokenize("A red, CUBE!  on\tthe (blue) sphere.") == ["a", "red", "cube", "on", "the", "blue", "sphere"]
    assert tokenize("¿Qué?… «sí»") == ["qué", "sí"]
    assert tokenize("don't stop") == ["dont", "stop"]


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=20), st.integers(1, 6))
def test_ngrams_match_brute_force(tokens, n):
    assert ngrams(tokens, n) == brute_ngrams(tokens, n)


def test_short_prompt_empty_profile():
    prof = NGramProfile.of("only four tokens here")
    assert prof.get(5) == frozenset() and prof.get(13) == frozenset()


def test_jaccard_examples():
    a, b = words(1, 10), words(1, 9)
    assert jaccard5(a, a) == 1.0
    assert jaccard5(a, words(20, 30)) == 0.0
    assert jaccard5(a, b) == pytest.approx(5 / 6)
    assert jaccard5("tiny", "also tiny") == 0.0


def test_containment_examples():
    a, b = words(1, 10), words(1, 9)
    assert containment(words(3, 9), words(1, 12), 5) == 1.0
    assert containment(a, words(20, 30), 5) == 0.0
    assert containment(a, b, 5) == pytest.approx(5 / 6)
    with pytest.raises(ValueError):
        containment("too short", a, 5)


text_st = st.lists(st.sampled_from([f"t{i}" for i in range(6)]), min_size=0, max_size=25).map(" ".join)


@given(text_st, text_st)
def test_metric_properties(a, b):
    assert jaccard5(a, b) == jaccard5(b, a)
    assert 0.0 <= jaccard5(a, b) <= 1.0
    if NGramProfile.of(a).get(5):
        assert containment(a, a, 5) == 1.0
        assert 0.0 <= containment(a, b, 5) <= 1.0


def test_8gram_boundary_inclusive():
    bench = words(1, 17)  # 10 eight-grams
    exactly_70 = words(1, 14)  # holds 7 of them
    assert containment(bench, exactly_70, 8) == pytest.approx(0.7)
    flagged, nearest, score = flag_8gram(bench, [exactly_70, words(50, 80)])
    assert flagged and nearest == exactly_70 and score == pytest.approx(0.7)
    assert not flag_8gram(bench, [words(1, 13)])[0]  # 6 of 10


def test_8gram_self_and_fresh():
    text = words(1, 20)
    assert flag_8gram(text, [text])[0]
    assert not flag_8gram(words(100, 130), [text])[0]


def test_13gram_collisions():
    pool = ["prefix " + words(1, 13) + " suffix"]
    assert collide_13gram(words(1, 13), pool)
    assert not collide_13gram(words(1, 12) + " zzz " + words(14, 25), [words(1, 12), words(14, 25)])
    assert not collide_13gram(words(1, 12), pool)


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_nearest_independent_of_pool_order(rnd):
    bench = words(1, 20)
    pool = [words(1, 14), words(7, 20), words(3, 16), words(100, 120), words(1, 14) + " extra"]
    rnd.shuffle(pool)
    ref = NGramIndex(sorted(pool), 8).nearest(NGramProfile.of(bench), "containment")
    assert NGramIndex(pool, 8).nearest(NGramProfile.of(bench), "containment") == ref


def test_hash_collisions_are_reverified(monkeypatch):
    monkeypatch.setattr(cm, "ngram_hash", lambda gram: 0)  # every n-gram collides
    index = NGramIndex([words(100, 120)], 8)
    assert index.candidates(NGramProfile.of(words(1, 20)).get(8)) == {0}
    assert index.nearest(words(1, 20)) == (0.0, None)
    assert not collide_13gram(words(1, 20), [words(100, 120)])


def test_cosine_screen_examples():
    v = np.array([1.0, 0.0, 0.0])
    w = np.array([0.0, 1.0, 0.0])
    mixed = (v + w) / np.linalg.norm(v + w)
    res = cosine_screen(np.stack([v, w, mixed]), np.stack([v]))
    assert res.max_similarity == pytest.approx([1.0, 0.0, math.sqrt(2) / 2])
    assert res.flags.tolist() == [True, False, False]
    unnormalized = cosine_screen(np.array([[3.0, 0.0, 0.0]]), np.array([[0.5, 0.0, 0.0]]))
    assert unnormalized.max_similarity[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine_screen(np.zeros((1, 3)), np.ones((1, 3)))


def _corpus(seed, vocab, n):
    rnd = random.Random(seed)
    return [" ".join(rnd.choice(vocab) for _ in range(rnd.randint(5, 30))) for _ in range(n)]


def test_self_audit_and_disjoint_corpus():
    pool = _corpus(0, [f"a{i}" for i in range(200)], 80)
    report = audit(pool, pool)
    for row, text in zip(report["rows"], pool):
        n = len(tokenize(text))
        assert row["collision13"] == (n >= 13)
        assert row["flag_8gram"] == (n >= 8)
    fresh = _corpus(1, [f"b{i}" for i in range(200)], 40)
    clean = audit(fresh, pool)
    assert clean["summary"]["flag_8gram"] == 0 and clean["summary"]["collision13"] == 0
    assert clean["summary"]["max_jaccard5"] == 0.0 and clean["summary"]["max_containment5"] == 0.0
