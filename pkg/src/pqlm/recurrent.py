"""Recurrent backbones: the VQC-gated Q-LSTM cell and its classical LSTM twin.

Both cells share the recombination

    c = f * c_prev + i * g
    h = o * tanh(c)

and differ only in how the gate pre-activations are produced. Every tensor
is float64; cells take batched inputs of shape (B, embed_dim).
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, InputError
from .quantum.torchvqc import VqcLayer
from .quantum.vqc import VqcParams, build_circuit

GATE_TAGS = ("forget", "input", "update", "output")


class RecurrentState(NamedTuple):
    h: torch.Tensor
    c: torch.Tensor


class ParamCount(NamedTuple):
    classical_params: int
    quantum_params: int
    total: int


def gate_seed(cell_seed: int, tag: str) -> int:
    """Independent 64-bit circuit seed for one gate of a cell."""
    ss = np.random.SeedSequence([cell_seed, GATE_TAGS.index(tag)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return torch.tensor(rng.uniform(-bound, bound, size=shape), dtype=torch.float64)


class _Cell(nn.Module):
    embed_dim: int
    hidden_dim: int

    def zero_state(self, batch: int = 1) -> RecurrentState:
        z = torch.zeros(batch, self.hidden_dim, dtype=torch.float64)
        return RecurrentState(z, z.clone())

    def _check(self, x_t: torch.Tensor, prev: RecurrentState) -> None:
        if x_t.shape[-1] != self.embed_dim:
            raise ConfigurationError(
                f"input width {x_t.shape[-1]} does not match embed_dim={self.embed_dim}"
            )
        if prev.h.shape[-1] != self.hidden_dim or prev.c.shape[-1] != self.hidden_dim:
            raise ConfigurationError(
                f"state width does not match hidden_dim={self.hidden_dim}"
            )

    def gates(self, x_t, h_prev):
        raise NotImplementedError

    def forward(self, x_t: torch.Tensor, prev: RecurrentState) -> RecurrentState:
        self._check(x_t, prev)
        f, i, g, o = self.gates(x_t, prev.h)
        c = f * prev.c + i * g
        h = o * torch.tanh(c)
        return RecurrentState(h, c)


class QLstmCell(_Cell):
    """LSTM cell with each of the four gate transforms replaced by a VQC.

    A single affine projection maps ``[x_t, h_prev]`` to ``n_qubits``
    values which feed all four circuits; each circuit's Z expectations are
    the gate pre-activations, so ``hidden_dim == n_qubits``.
    """

    def __init__(
        self,
        embed_dim: int = 64,
        n_qubits: int = 4,
        n_layers: int = 2,
        seed: int = 0,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if embed_dim < 1:
            raise ConfigurationError("embed_dim must be positive")
        self.embed_dim = embed_dim
        self.n_qubits = n_qubits
        self.n_layers = n_layers
        self.hidden_dim = n_qubits
        rng = rng if rng is not None else np.random.default_rng(seed)
        fan_in = embed_dim + n_qubits
        self.proj_weight = nn.Parameter(_uniform(rng, (n_qubits, fan_in), fan_in))
        self.proj_bias = nn.Parameter(_uniform(rng, (n_qubits,), fan_in))
        for tag in GATE_TAGS:
            spec = build_circuit(gate_seed(seed, tag), n_qubits, n_layers)
            setattr(self, f"vqc_{tag}", VqcLayer(spec, VqcParams.random(spec, rng)))

    @property
    def vqcs(self) -> dict[str, VqcLayer]:
        return {tag: getattr(self, f"vqc_{tag}") for tag in GATE_TAGS}

    def gates(self, x_t, h_prev):
        u = torch.cat([x_t, h_prev], dim=-1) @ self.proj_weight.T + self.proj_bias
        f = torch.sigmoid(self.vqc_forget(u))
        i = torch.sigmoid(self.vqc_input(u))
        g = torch.tanh(self.vqc_update(u))
        o = torch.sigmoid(self.vqc_output(u))
        return f, i, g, o

    def param_count(self) -> ParamCount:
        n, d = self.n_qubits, self.embed_dim
        classical = n * (d + n) + n
        quantum = len(GATE_TAGS) * self.n_layers * n * 3
        return ParamCount(classical, quantum, classical + quantum)


class ClassicalLstmCell(_Cell):
    """Textbook LSTM with one stacked weight matrix, gate order (f, i, g, o)."""

    def __init__(
        self,
        embed_dim: int = 64,
        hidden_dim: int = 5,
        seed: int = 0,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if embed_dim < 1 or hidden_dim < 1:
            raise ConfigurationError("embed_dim and hidden_dim must be positive")
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        rng = rng if rng is not None else np.random.default_rng(seed)
        fan_in = embed_dim + hidden_dim
        self.weight = nn.Parameter(_uniform(rng, (4 * hidden_dim, fan_in), fan_in))
        self.bias = nn.Parameter(_uniform(rng, (4 * hidden_dim,), fan_in))

    def gates(self, x_t, h_prev):
        z = torch.cat([x_t, h_prev], dim=-1) @ self.weight.T + self.bias
        zf, zi, zg, zo = z.chunk(4, dim=-1)
        return torch.sigmoid(zf), torch.sigmoid(zi), torch.tanh(zg), torch.sigmoid(zo)

    def param_count(self) -> ParamCount:
        hd, d = self.hidden_dim, self.embed_dim
        classical = 4 * (hd * (d + hd) + hd)
        return ParamCount(classical, 0, classical)


def _as_batch(x) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(x, dtype=torch.float64)
    return (t.unsqueeze(0), True) if t.ndim == 1 else (t, False)


def _step(cell: _Cell, x_t, prev: RecurrentState | None) -> RecurrentState:
    x, squeeze = _as_batch(x_t)
    if prev is None:
        prev = cell.zero_state(x.shape[0])
    elif squeeze:
        prev = RecurrentState(*(torch.as_tensor(v, dtype=torch.float64).reshape(1, -1) for v in prev))
    out = cell(x, prev)
    return RecurrentState(out.h[0], out.c[0]) if squeeze else out


def qlstm_step(cell: QLstmCell, x_t, prev: RecurrentState | None = None) -> RecurrentState:
    if not isinstance(cell, QLstmCell):
        raise ConfigurationError("qlstm_step needs a QLstmCell")
    return _step(cell, x_t, prev)


def lstm_step(cell: ClassicalLstmCell, x_t, prev: RecurrentState | None = None) -> RecurrentState:
    if not isinstance(cell, ClassicalLstmCell):
        raise ConfigurationError("lstm_step needs a ClassicalLstmCell")
    return _step(cell, x_t, prev)


def sequence_forward(cell: _Cell, xs) -> list[RecurrentState]:
    """Unroll ``cell`` over ``xs`` from the zero state.

    ``xs`` is a sequence of (embed_dim,) vectors or a (T, embed_dim) /
    (T, B, embed_dim) tensor.
    """
    if len(xs) == 0:
        raise InputError("sequence_forward needs a nonempty sequence")
    states = []
    prev = None
    for x_t in xs:
        prev = _step(cell, x_t, prev)
        states.append(prev)
    return states


def param_count(cell: _Cell) -> ParamCount:
    return cell.param_count()
