"""Seeded synthetic corpora standing in for the Twitter / code-mixed data.

``template_corpus`` has strong next-token structure and a small vocabulary,
``zipf_corpus`` grows its vocabulary with the number of documents, and
``sentiment_corpus`` produces label populations with disjoint word sets.
"""
from __future__ import annotations

import numpy as np

from .textprep import LABELS, RawDocument

_DET = ["the", "a", "my", "your"]
_ADJ = ["big", "small", "happy", "sad", "red", "old"]
_NOUN = ["cat", "dog", "bird", "fish", "tree", "car", "house", "phone"]
_VERB = ["sees", "likes", "hates", "wants", "finds", "takes"]
_TAIL = ["today", "again", "now", "lol"]


def template_corpus(n_docs: int = 50, seed: int = 0) -> list[str]:
    """``det adj noun verb det noun [tail]`` sentences; vocab stays under 32 words."""
    rng = np.random.default_rng(seed)
    docs = []
    for _ in range(n_docs):
        words = [
            rng.choice(_DET),
            rng.choice(_ADJ),
            rng.choice(_NOUN),
            rng.choice(_VERB),
            rng.choice(_DET),
            rng.choice(_NOUN),
        ]
        if rng.random() < 0.5:
            words.append(rng.choice(_TAIL))
        docs.append(" ".join(str(w) for w in words))
    return docs


def zipf_corpus(n_docs: int, seed: int = 0, words_per_doc: int = 8, vocab_per_doc: float = 0.5) -> list[str]:
    """Zipf-distributed words over ``vocab_per_doc * n_docs`` word types."""
    rng = np.random.default_rng(seed)
    n_types = max(8, int(vocab_per_doc * n_docs))
    ranks = np.arange(1, n_types + 1)
    p = 1.0 / ranks
    p /= p.sum()
    docs = []
    for _ in range(n_docs):
        k = rng.integers(words_per_doc // 2, words_per_doc + 1)
        docs.append(" ".join(f"w{i}" for i in rng.choice(n_types, size=k, p=p)))
    return docs


def sentiment_corpus(
    n_docs: int = 200, seed: int = 0, labels: tuple[str, ...] = ("negative", "positive"), words_per_label: int = 12
) -> list[RawDocument]:
    """Labelled documents whose label populations share no tokens."""
    for label in labels:
        if label not in LABELS:
            raise ValueError(f"unknown label {label!r}")
    rng = np.random.default_rng(seed)
    lexicon = {
        label: [f"{label[:3]}{k}" for k in range(words_per_label)] for label in labels
    }
    docs = []
    for k in range(n_docs):
        label = labels[k % len(labels)]
        n = int(rng.integers(4, 10))
        words = rng.choice(lexicon[label], size=n)
        docs.append(RawDocument(" ".join(str(w) for w in words), label))
    order = rng.permutation(n_docs)
    return [docs[k] for k in order]
