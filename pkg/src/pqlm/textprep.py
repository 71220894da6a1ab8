"""Corpus cleaning, tokenization and vocabulary construction."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

from .errors import InputError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

LABELS = ("negative", "neutral", "positive", "irrelevant")

EMPTY = ""

_URL = re.compile(r"https?://\S+")
_SPACE = re.compile(r"\s+")
_VS16 = "\ufe0f"

EMOTICONS = {
    ":)": ":slightly_smiling_face:",
    ":-)": ":slightly_smiling_face:",
    ":(": ":slightly_frowning_face:",
    ":-(": ":slightly_frowning_face:",
    ":D": ":grinning_face:",
    ":-D": ":grinning_face:",
    ";)": ":winking_face:",
    ";-)": ":winking_face:",
    ":P": ":face_with_tongue:",
    ":p": ":face_with_tongue:",
    ":'(": ":crying_face:",
    ":O": ":face_with_open_mouth:",
    ":o": ":face_with_open_mouth:",
    "<3": ":red_heart:",
    "</3": ":broken_heart:",
    "xD": ":grinning_squinting_face:",
    "XD": ":grinning_squinting_face:",
}


@dataclass(frozen=True)
class RawDocument:
    text: str
    label: str | None = None

    def __post_init__(self):
        if self.label is not None and self.label not in LABELS:
            raise InputError(f"label {self.label!r} not in {LABELS}")


@lru_cache(maxsize=1)
def emoji_table() -> dict[str, str]:
    """Bundled emoji -> ':snake_case:' descriptor table."""
    text = resources.files("pqlm").joinpath("data/emoji.tsv").read_text(encoding="utf-8")
    table = {}
    for line in text.splitlines():
        if line.strip():
            code, name = line.split("\t")
            table["".join(chr(int(c, 16)) for c in code.split())] = name
    return table


@lru_cache(maxsize=1)
def _emoji_pattern() -> re.Pattern:
    keys = sorted(emoji_table(), key=len, reverse=True)
    return re.compile("(" + "|".join(map(re.escape, keys)) + ")" + _VS16 + "?")


def clean(text: str) -> str:
    """Strip '#', drop URLs, spell out emoji and emoticons, collapse spaces."""
    text = text.replace("#", "")
    text = _URL.sub(" ", text)
    table = emoji_table()
    text = _emoji_pattern().sub(lambda m: f" {table[m.group(1)]} ", text)
    words = [EMOTICONS.get(w, w) for w in _SPACE.split(text) if w]
    return " ".join(words) if words else EMPTY


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise InputError(f"vocab must start with {RESERVED}")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise InputError("vocab tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(docs: Iterable[str], max_size: int) -> Vocab:
    """Frequency-ranked vocab of at most ``max_size`` entries.

    ``docs`` are cleaned texts; ties are broken lexicographically.
    """
    if max_size <= len(RESERVED):
        raise InputError(f"max_size must exceed {len(RESERVED)} reserved tokens")
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in docs:
        n_docs += 1
        counts.update(tokenize(doc))
    if n_docs == 0:
        raise InputError("cannot build a vocab from an empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocab(list(RESERVED) + kept)


def encode_ids(vocab: Vocab, tokens: Iterable[str]) -> list[int]:
    return vocab.encode(tokens)


# ---------------------------------------------------------------------------
# file formats


def read_corpus(path) -> list[str]:
    """One document per line; blank lines are skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line for line in lines if line.strip()]


def write_corpus(docs: Iterable[str], path) -> None:
    Path(path).write_text("".join(d + "\n" for d in docs), encoding="utf-8")


def read_labeled(path) -> list[RawDocument]:
    """``label<TAB>text`` per line."""
    docs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        label, sep, text = line.partition("\t")
        if not sep:
            raise InputError(f"{path}:{lineno}: expected label<TAB>text")
        docs.append(RawDocument(text, label.strip()))
    return docs


def write_labeled(docs: Iterable[RawDocument], path) -> None:
    Path(path).write_text(
        "".join(f"{d.label}\t{d.text}\n" for d in docs), encoding="utf-8"
    )


def preprocess(texts: Iterable[str]) -> list[str]:
    """Clean every document and drop the ones that end up empty."""
    out = []
    for t in texts:
        c = clean(t)
        if c != EMPTY:
            out.append(c)
    return out
