"""Local sentiment classifier built on imported embeddings.

A small pre-norm transformer encoder whose token embeddings come from a
``.pqlm`` file (frozen unless fine-tuning is requested), mean-pooled over
non-pad positions, followed by a linear softmax head over the fixed label
order :data:`~pqlm.textprep.LABELS`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .embedport import read_embeddings
from .errors import ConfigurationError, FormatError, InputError
from .tensorio import decode_tensor, encode_tensor
from .textprep import LABELS, PAD_ID, UNK_ID, RawDocument, Vocab, tokenize

N_LABELS = len(LABELS)


@dataclass
class ClassifierConfig:
    blocks: int = 4
    heads: int = 4
    ff_dim: int = 128
    dropout: float = 0.1
    max_seq_len: int = 64
    finetune: bool = False
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("blocks", "heads", "ff_dim", "max_seq_len", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.lr < 0 or not 0 <= self.dropout < 1:
            raise ConfigurationError("invalid lr or dropout")


@dataclass
class Prediction:
    probabilities: np.ndarray
    label: int

    @property
    def label_name(self) -> str:
        return LABELS[self.label]


class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        if width % heads:
            raise ConfigurationError(f"{heads} heads do not divide width {width}")
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.drop = nn.Dropout(dropout)
        self.last_weights: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        b, t, w = x.shape
        q, k, v = self.qkv(x).view(b, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        self.last_weights = weights.detach()
        ctx = (self.drop(weights) @ v).transpose(1, 2).reshape(b, t, w)
        return self.out(ctx)


class EncoderBlock(nn.Module):
    def __init__(self, width: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads, dropout)
        self.ln2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, ff_dim), nn.GELU(), nn.Linear(ff_dim, width))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask):
        x = x + self.drop(self.attn(self.ln1(x), key_mask))
        return x + self.drop(self.ff(self.ln2(x)))


class TransformerClassifier(nn.Module):
    def __init__(self, embeddings: np.ndarray, vocab: Vocab, config: ClassifierConfig | None = None):
        super().__init__()
        config = config or ClassifierConfig()
        self.config = config
        self.vocab = vocab
        rows, width = embeddings.shape
        if rows != len(vocab):
            raise InputError("embedding rows do not match vocab size")
        torch.manual_seed(config.seed)
        self.embedding = nn.Embedding.from_pretrained(
            torch.as_tensor(np.asarray(embeddings, dtype=np.float64)), freeze=not config.finetune
        )
        self.position = nn.Embedding(config.max_seq_len, width)
        self.blocks = nn.ModuleList(
            EncoderBlock(width, config.heads, config.ff_dim, config.dropout) for _ in range(config.blocks)
        )
        self.ln = nn.LayerNorm(width)
        self.head = nn.Linear(width, N_LABELS)
        # Embedding.from_pretrained already holds float64; cast the rest
        self.double()

    @property
    def width(self) -> int:
        return self.embedding.embedding_dim

    def encode(self, ids: torch.Tensor) -> torch.Tensor:
        """The pooled text representation, shape (B, width)."""
        mask = ids != PAD_ID
        pos = torch.arange(ids.shape[1])
        x = self.embedding(ids) + self.position(pos)[None]
        for block in self.blocks:
            x = block(x, mask)
        x = self.ln(x)
        m = mask.unsqueeze(-1).to(x.dtype)
        return (x * m).sum(1) / m.sum(1).clamp(min=1)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, T) ids -> (B, 4) logits."""
        return self.head(self.encode(ids))


def encode_docs(vocab: Vocab, texts: Sequence[str], max_seq_len: int) -> list[list[int]]:
    return [vocab.encode(tokenize(t))[:max_seq_len] or [UNK_ID] for t in texts]


def pad_ids(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    for k, s in enumerate(seqs):
        out[k, : len(s)] = torch.as_tensor(s)
    return out


def clf_forward(clf: TransformerClassifier, ids: Sequence[int]) -> Prediction:
    ids = list(ids)
    if not ids:
        raise InputError("clf_forward needs a nonempty id sequence")
    if min(ids) < 0 or max(ids) >= len(clf.vocab):
        raise IndexError("token id out of range")
    if len(ids) > clf.config.max_seq_len:
        raise InputError(f"sequence longer than max_seq_len={clf.config.max_seq_len}")
    was_training = clf.training
    clf.eval()
    with torch.no_grad():
        probs = torch.softmax(clf(torch.tensor([ids])), dim=-1)[0].numpy()
    clf.train(was_training)
    # np.argmax returns the first maximum: lowest-index tie-break
    return Prediction(probs, int(np.argmax(probs)))


def predict(clf: TransformerClassifier, texts: Sequence[str], batch_size: int = 64) -> list[int]:
    seqs = encode_docs(clf.vocab, texts, clf.config.max_seq_len)
    clf.eval()
    labels = []
    with torch.no_grad():
        for k in range(0, len(seqs), batch_size):
            logits = clf(pad_ids(seqs[k : k + batch_size]))
            labels += [int(np.argmax(row)) for row in torch.softmax(logits, -1).numpy()]
    return labels


def label_ids(docs: Sequence[RawDocument]) -> list[int]:
    out = []
    for d in docs:
        if d.label not in LABELS:
            raise InputError(f"label {d.label!r} not in {LABELS}")
        out.append(LABELS.index(d.label))
    return out


def train_classifier(
    embeddings_file,
    labeled_docs: Sequence[RawDocument],
    config: ClassifierConfig | None = None,
) -> tuple[TransformerClassifier, list[float]]:
    """Train on labelled documents from a ``.pqlm`` embedding file.

    Returns the classifier and the mean training loss of every epoch.
    """
    config = config or ClassifierConfig()
    if not labeled_docs:
        raise InputError("no labelled documents")
    golds = label_ids(labeled_docs)
    matrix, vocab = read_embeddings(embeddings_file)
    clf = TransformerClassifier(matrix, vocab, config)
    seqs = encode_docs(vocab, [d.text for d in labeled_docs], config.max_seq_len)
    params = [p for p in clf.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.lr, foreach=False)
    rng = np.random.default_rng([config.seed, 0xC1])
    losses = []
    clf.train()
    for _ in range(config.epochs):
        order = rng.permutation(len(seqs))
        total = 0.0
        for start in range(0, len(seqs), config.batch_size):
            idx = order[start : start + config.batch_size]
            ids = pad_ids([seqs[k] for k in idx])
            y = torch.tensor([golds[k] for k in idx])
            loss = F.cross_entropy(clf(ids), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        losses.append(total / len(seqs))
    clf.eval()
    return clf, losses


# ---------------------------------------------------------------------------
# metrics


def _check_pair(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise InputError(f"{len(preds)} predictions vs {len(golds)} gold labels")
    if not golds:
        raise InputError("metrics need at least one example")


def accuracy(preds: Sequence, golds: Sequence) -> float:
    _check_pair(preds, golds)
    return sum(p == g for p, g in zip(preds, golds)) / len(golds)


def per_class(preds: Sequence, golds: Sequence) -> dict:
    """precision / recall / f1 / support per class seen in either list."""
    _check_pair(preds, golds)
    classes = sorted(set(golds) | set(preds), key=str)
    report = {}
    for c in classes:
        tp = sum(p == c and g == c for p, g in zip(preds, golds))
        n_pred = sum(p == c for p in preds)
        support = sum(g == c for g in golds)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        report[c] = {"precision": precision, "recall": recall, "f1": f1, "support": support}
    return report


def weighted_f1(preds: Sequence, golds: Sequence) -> float:
    report = per_class(preds, golds)
    n = len(golds)
    return sum(r["support"] / n * r["f1"] for r in report.values())


def metrics_report(preds: Sequence[int], golds: Sequence[int]) -> dict:
    """The metrics JSON document, classes keyed by label name."""
    named_p = [LABELS[p] for p in preds]
    named_g = [LABELS[g] for g in golds]
    return {
        "accuracy": accuracy(named_p, named_g),
        "weighted_f1": weighted_f1(named_p, named_g),
        "per_class": per_class(named_p, named_g),
    }


def write_metrics(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# classifier checkpoints (same container style as the language model)


CLF_FORMAT = "pqlm-classifier"
CLF_VERSION = 1


def save_classifier(clf: TransformerClassifier, path) -> None:
    tensors = {k: encode_tensor(v) for k, v in clf.state_dict().items()}
    doc = {
        "format": CLF_FORMAT,
        "version": CLF_VERSION,
        "config": asdict(clf.config),
        "vocab": clf.vocab.tokens,
        "tensors": tensors,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_classifier(path) -> TransformerClassifier:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a classifier checkpoint") from exc
    if doc.get("format") != CLF_FORMAT or doc.get("version") != CLF_VERSION:
        raise FormatError(f"{path}: not a version-{CLF_VERSION} classifier checkpoint")
    tensors = {k: decode_tensor(v) for k, v in doc["tensors"].items()}
    emb = tensors["embedding.weight"].numpy()
    clf = TransformerClassifier(emb, Vocab(doc["vocab"]), ClassifierConfig(**doc["config"]))
    clf.load_state_dict(tensors)
    clf.eval()
    return clf
