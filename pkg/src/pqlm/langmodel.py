"""Next-token language model over a quantum or classical recurrent backbone.

Sequences are ``<bos> tokens <eos>`` truncated to ``max_seq_len``; the model
predicts token t+1 from the prefix up to t. Training is NLL with Adam, and
the only artifact meant to leave the training host is the embedding table
returned by :func:`extract_embeddings`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, FormatError, InputError
from .tensorio import decode_tensor, encode_tensor
from .recurrent import ClassicalLstmCell, QLstmCell
from .textprep import BOS_ID, EOS_ID, PAD_ID, Vocab, build_vocab, tokenize

BACKENDS = ("quantum", "classical")
CHECKPOINT_FORMAT = "pqlm-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    backend: str = "quantum"
    embed_dim: int = 64
    n_qubits: int = 4
    n_layers: int = 2
    hidden: int = 5
    max_vocab: int = 17000
    # None: derived from the training seed
    circuit_seed: int | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        for name in ("embed_dim", "n_qubits", "n_layers", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.max_vocab <= 4:
            raise ConfigurationError("max_vocab must exceed the 4 reserved tokens")

    @property
    def hidden_dim(self) -> int:
        return self.n_qubits if self.backend == "quantum" else self.hidden


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 16
    max_seq_len: int = 32
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # which documents perplexity is reported on: "train" or "holdout"
    eval_split: str = "train"
    holdout_fraction: float = 0.1
    # moving-average window applied to exported loss curves; 1 = raw
    loss_smoothing: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "loss_smoothing"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.max_seq_len < 2:
            raise ConfigurationError("max_seq_len must be at least 2")
        if self.lr < 0 or self.eps <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("invalid optimizer constants")
        if self.eval_split not in ("train", "holdout"):
            raise ConfigurationError("eval_split must be 'train' or 'holdout'")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigurationError("holdout_fraction must be in (0, 1)")


@dataclass
class EmbeddingMatrix:
    values: np.ndarray

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class LossHistory:
    batches: list[tuple[int, int, float]] = field(default_factory=list)
    epochs: list[float] = field(default_factory=list)

    def first_epoch(self) -> list[float]:
        return [loss for epoch, _, loss in self.batches if epoch == 1]

    def write_csv(self, path, smoothing: int = 1) -> None:
        losses = [loss for _, _, loss in self.batches]
        if smoothing > 1:
            losses = [
                float(np.mean(losses[max(0, k - smoothing + 1) : k + 1])) for k in range(len(losses))
            ]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "batch", "loss"])
            for (epoch, batch, _), loss in zip(self.batches, losses):
                w.writerow([epoch, batch, repr(float(loss))])


def derive_circuit_seed(seed: int) -> int:
    ss = np.random.SeedSequence([seed, 0x9C])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class LmModel(nn.Module):
    def __init__(self, vocab: Vocab, config: ModelConfig, seed: int = 0):
        super().__init__()
        if config.backend == "quantum" and config.circuit_seed is None:
            config = replace(config, circuit_seed=derive_circuit_seed(seed))
        self.vocab = vocab
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        v, d = len(vocab), config.embed_dim
        self.embedding = nn.Embedding(v, d, dtype=torch.float64)
        with torch.no_grad():
            self.embedding.weight.copy_(torch.from_numpy(rng.standard_normal((v, d))))
        if config.backend == "quantum":
            self.backbone = QLstmCell(d, config.n_qubits, config.n_layers, config.circuit_seed, rng)
        else:
            self.backbone = ClassicalLstmCell(d, config.hidden, rng=rng)
        hd = config.hidden_dim
        bound = 1.0 / math.sqrt(hd)
        self.head = nn.Linear(hd, v, dtype=torch.float64)
        with torch.no_grad():
            self.head.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, (v, hd))))
            self.head.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, v)))

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, T) ids -> (B, T, V) log-probabilities."""
        x = self.embedding(ids)
        state = self.backbone.zero_state(ids.shape[0])
        hs = []
        for t in range(ids.shape[1]):
            state = self.backbone(x[:, t], state)
            hs.append(state.h)
        h = torch.stack(hs, dim=1)
        return torch.log_softmax(self.head(h), dim=-1)


def _check_ids(model: LmModel, ids: torch.Tensor) -> None:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= model.vocab_size):
        raise IndexError(f"token id out of range for vocab of size {model.vocab_size}")


def lm_forward(model: LmModel, ids: Sequence[int]) -> torch.Tensor:
    """Log-probabilities (T, V) for a single id sequence."""
    t = torch.as_tensor(list(ids), dtype=torch.long)
    if t.numel() == 0:
        raise InputError("lm_forward needs a nonempty id sequence")
    _check_ids(model, t)
    return model(t.unsqueeze(0))[0]


def nll(logprobs: torch.Tensor, targets) -> torch.Tensor:
    """Mean negative log-likelihood over non-pad target positions."""
    targets = torch.as_tensor(targets, dtype=torch.long)
    if logprobs.shape[:-1] != targets.shape:
        raise InputError(
            f"logprobs {tuple(logprobs.shape[:-1])} and targets {tuple(targets.shape)} differ"
        )
    mask = targets != PAD_ID
    if not bool(mask.any()):
        raise InputError("every target position is padding")
    picked = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum() / mask.sum()


def to_sequences(vocab: Vocab, docs: Iterable[str], max_seq_len: int) -> list[list[int]]:
    seqs = []
    for doc in docs:
        seq = ([BOS_ID] + vocab.encode(tokenize(doc)) + [EOS_ID])[:max_seq_len]
        seqs.append(seq)
    return seqs


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Shifted (inputs, targets) with pad id 0 at the tail."""
    width = max(len(s) for s in seqs) - 1
    inp = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    tgt = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    for k, s in enumerate(seqs):
        inp[k, : len(s) - 1] = torch.tensor(s[:-1])
        tgt[k, : len(s) - 1] = torch.tensor(s[1:])
    return inp, tgt


def corpus_nll(model: LmModel, docs: Sequence[str], max_seq_len: int = 32, batch_size: int = 64) -> float:
    """Token-weighted mean NLL of ``docs`` under ``model``."""
    seqs = to_sequences(model.vocab, docs, max_seq_len)
    if not seqs:
        raise InputError("perplexity needs a nonempty corpus")
    total, count = 0.0, 0
    with torch.no_grad():
        for k in range(0, len(seqs), batch_size):
            inp, tgt = pad_batch(seqs[k : k + batch_size])
            logp = model(inp)
            mask = tgt != PAD_ID
            picked = logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)
            total -= float((picked * mask).sum())
            count += int(mask.sum())
    return total / count


def perplexity(model: LmModel, docs: Sequence[str], max_seq_len: int = 32) -> float:
    return math.exp(corpus_nll(model, docs, max_seq_len))


def circuit_evals_per_token(config: ModelConfig) -> int:
    """Circuit runs for one forward+backward token step (0 when classical)."""
    if config.backend != "quantum":
        return 0
    n = config.n_qubits
    shifted = 2 * (config.n_layers * n * 3 + 2 * n)
    return 4 * (1 + shifted)


def estimate_circuit_evals(config: ModelConfig, train: TrainConfig, n_tokens: int) -> int:
    return circuit_evals_per_token(config) * n_tokens * train.epochs


def split_holdout(docs: Sequence[str], fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Seeded (train, holdout) split of a document list."""
    rng = np.random.default_rng([seed, 0x40])
    order = rng.permutation(len(docs))
    n_hold = max(1, int(round(fraction * len(docs))))
    hold = set(order[:n_hold].tolist())
    return (
        [d for k, d in enumerate(docs) if k not in hold],
        [d for k, d in enumerate(docs) if k in hold],
    )


ProgressFn = Callable[[int, int, float], None]


def train_lm(
    docs: Sequence[str],
    config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
    *,
    vocab: Vocab | None = None,
    progress: ProgressFn | None = None,
) -> tuple[LmModel, LossHistory]:
    """Train a language model on cleaned documents.

    Returns the model and its loss history (every batch, plus the
    token-weighted mean per epoch). ``progress(epoch, batch, loss)`` is
    called after each optimizer step.
    """
    config = config or TrainConfig()
    model_config = model_config or ModelConfig()
    docs = list(docs)
    if not docs:
        raise InputError("cannot train on an empty corpus")
    if vocab is None:
        vocab = build_vocab(docs, model_config.max_vocab)
    if len(vocab) <= 4:
        raise InputError("corpus produced an empty vocabulary")
    seqs = [s for s in to_sequences(vocab, docs, config.max_seq_len) if len(s) >= 2]

    torch.manual_seed(config.seed)
    model = LmModel(vocab, model_config, seed=config.seed)
    opt = torch.optim.Adam(
        model.parameters(),
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
        foreach=False,
    )
    shuffle = np.random.default_rng([config.seed, 0x5F])
    history = LossHistory()
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(len(seqs))
        weighted, tokens = 0.0, 0
        for b, start in enumerate(range(0, len(seqs), config.batch_size)):
            batch = [seqs[k] for k in order[start : start + config.batch_size]]
            inp, tgt = pad_batch(batch)
            loss = nll(model(inp), tgt)
            opt.zero_grad()
            loss.backward()
            opt.step()
            value = loss.item()
            n_tok = int((tgt != PAD_ID).sum())
            weighted += value * n_tok
            tokens += n_tok
            history.batches.append((epoch, b, value))
            if progress is not None:
                progress(epoch, b, value)
        history.epochs.append(weighted / tokens)
    model.eval()
    return model, history


def extract_embeddings(model: LmModel) -> tuple[EmbeddingMatrix, Vocab]:
    """The embedding table and vocab; nothing else from the model."""
    values = model.embedding.weight.detach().cpu().numpy().astype(np.float64, copy=True)
    return EmbeddingMatrix(values), Vocab(list(model.vocab.tokens))


# ---------------------------------------------------------------------------
# checkpoints: versioned JSON, see tensorio


def checkpoint_bytes(model: LmModel) -> bytes:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": asdict(model.config),
        "seed": model.seed,
        "vocab": model.vocab.tokens,
        "tensors": {k: encode_tensor(v) for k, v in model.state_dict().items()},
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def save_checkpoint(model: LmModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> LmModel:
    try:
        doc = json.loads(Path(path).read_bytes())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a pqlm checkpoint") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a pqlm checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    model = LmModel(Vocab(doc["vocab"]), ModelConfig(**doc["model"]), seed=doc["seed"])
    model.load_state_dict({k: decode_tensor(v) for k, v in doc["tensors"].items()})
    model.eval()
    return model
