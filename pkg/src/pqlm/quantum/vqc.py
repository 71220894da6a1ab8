"""Variational quantum circuits: angle encoding, seeded entangling layers,
trainable rotations and Pauli-Z readout, with parameter-shift Jacobians.

Circuit layout for ``n`` qubits and ``L`` layers::

    |0> - H - RY(arctan x_i) - RZ(arctan x_i^2) -  [ CNOTs(layer) - RX RY RZ ] * L  - <Z_i>

Each layer's CNOT list is a seed-dependent ordering of the ring
``(i, (i + 1) % n)``; that ordering is the private part of the circuit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericError
from .core import (
    MAX_QUBITS,
    Gate,
    apply_1q_batch,
    apply_cnot_batch,
    expect_z_batch,
    rx_matrix,
    ry_matrix,
    rz_matrix,
)

SHIFT = np.pi / 2
_U64 = 2**64


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    n_layers: int
    seed: int
    entanglement: tuple[tuple[tuple[int, int], ...], ...] = field(repr=False)

    @property
    def n_params(self) -> int:
        return self.n_layers * self.n_qubits * 3

    @property
    def param_shape(self) -> tuple[int, int, int]:
        return (self.n_layers, self.n_qubits, 3)


@dataclass
class VqcParams:
    """Trainable (alpha, beta, gamma) = (RX, RY, RZ) angles per layer and qubit."""

    angles: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        if self.angles.ndim != 3 or self.angles.shape[2] != 3:
            raise ConfigurationError(
                f"angles must have shape (n_layers, n_qubits, 3), got {self.angles.shape}"
            )

    @property
    def count(self) -> int:
        return self.angles.size

    @classmethod
    def zeros(cls, spec: CircuitSpec) -> "VqcParams":
        return cls(np.zeros(spec.param_shape))

    @classmethod
    def random(cls, spec: CircuitSpec, rng: np.random.Generator) -> "VqcParams":
        return cls(rng.uniform(-np.pi, np.pi, size=spec.param_shape))


def build_circuit(seed: int, n_qubits: int, n_layers: int) -> CircuitSpec:
    if not 2 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in [2, {MAX_QUBITS}], got {n_qubits}")
    if n_layers < 1:
        raise ConfigurationError(f"n_layers must be >= 1, got {n_layers}")
    if not 0 <= seed < _U64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    ring = [(i, (i + 1) % n_qubits) for i in range(n_qubits)]
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for _ in range(n_layers):
        order = rng.permutation(n_qubits)
        layers.append(tuple(ring[k] for k in order))
    return CircuitSpec(int(n_qubits), int(n_layers), int(seed), tuple(layers))


def encoding_angles(x) -> np.ndarray:
    """(arctan x, arctan x^2) per input coordinate, shape (..., n, 2)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("encoder inputs must be finite")
    with np.errstate(over="ignore"):  # x*x -> inf still maps to pi/2
        return np.stack([np.arctan(x), np.arctan(x * x)], axis=-1)


def encode(x) -> list[Gate]:
    angles = encoding_angles(x)
    if angles.ndim != 2:
        raise ConfigurationError("encode expects a 1-D input vector")
    gates = []
    for q, (ry, rz) in enumerate(angles):
        gates += [Gate.h(q), Gate.ry(q, ry), Gate.rz(q, rz)]
    return gates


def circuit_gates(spec: CircuitSpec, params: VqcParams, x) -> list[Gate]:
    """The full gate sequence for one evaluation, in application order."""
    _check_dims(spec, params, np.asarray(x, dtype=float))
    gates = encode(x)
    for layer, pairs in enumerate(spec.entanglement):
        gates += [Gate.cnot(c, t) for c, t in pairs]
        for q in range(spec.n_qubits):
            a, b, g = params.angles[layer, q]
            gates += [Gate.rx(q, a), Gate.ry(q, b), Gate.rz(q, g)]
    return gates


def _check_dims(spec: CircuitSpec, params: VqcParams, x: np.ndarray) -> None:
    if params.angles.shape != spec.param_shape:
        raise ConfigurationError(
            f"params shape {params.angles.shape} does not match circuit {spec.param_shape}"
        )
    if x.shape[-1:] != (spec.n_qubits,):
        raise ConfigurationError(
            f"input width {x.shape[-1:]} does not match n_qubits={spec.n_qubits}"
        )


def simulate(spec: CircuitSpec, enc: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Batched circuit evaluation.

    ``enc`` has shape (..., n, 2) holding the encoding RY/RZ angles and
    ``theta`` has shape (..., L, n, 3); leading axes broadcast. Returns the
    Z expectations with shape (broadcast batch, n).
    """
    n = spec.n_qubits
    enc = np.asarray(enc, dtype=float)
    theta = np.asarray(theta, dtype=float)
    # the encoded register is a product state: qubit q is RZ RY H |0>
    h0 = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)
    local = np.einsum("...qij,...qjk,k->...qi", rz_matrix(enc[..., 1]), ry_matrix(enc[..., 0]), h0)
    amps = local[..., 0, :]
    for q in range(1, n):
        amps = (local[..., q, :, None] * amps[..., None, :]).reshape(amps.shape[:-1] + (-1,))
    batch = np.broadcast_shapes(enc.shape[:-2], theta.shape[:-3])
    amps = np.broadcast_to(amps, batch + amps.shape[-1:])
    for layer, pairs in enumerate(spec.entanglement):
        for c, t in pairs:
            amps = apply_cnot_batch(amps, c, t)
        ang = theta[..., layer, :, :]
        block = rz_matrix(ang[..., 2]) @ ry_matrix(ang[..., 1]) @ rx_matrix(ang[..., 0])
        for q in range(n):
            amps = apply_1q_batch(amps, block[..., q, :, :], q)
    return expect_z_batch(amps)


def vqc_forward(spec: CircuitSpec, params: VqcParams, x) -> np.ndarray:
    """<Z_i> for every qubit after encoding ``x`` and running the layers.

    ``x`` may carry leading batch axes.
    """
    x = np.asarray(x, dtype=float)
    _check_dims(spec, params, x)
    return simulate(spec, encoding_angles(x), params.angles)


def _shifted(base: np.ndarray, n_axes: int) -> np.ndarray:
    """Stack base +/- SHIFT on each of the trailing ``n_axes``-D entries.

    Returns shape (..., 2 * k, *trailing) with k entries: rows [0, k) are
    the + shifts, rows [k, 2k) the - shifts, flattened in C order.
    """
    trailing = base.shape[base.ndim - n_axes:]
    k = int(np.prod(trailing))
    eye = np.eye(k).reshape((k,) + trailing)
    delta = np.concatenate([eye, -eye]) * SHIFT
    return base[(Ellipsis, None) + (slice(None),) * n_axes] + delta


def vqc_gradients(spec: CircuitSpec, params: VqcParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-shift Jacobians of :func:`vqc_forward`.

    Returns ``(d_params, d_x)`` with shapes ``(..., n, L, n, 3)`` and
    ``(..., n, n)``: output index first, then the differentiated variable.
    Input derivatives chain the encoding-angle shifts through
    d arctan(x)/dx = 1/(1+x^2) and d arctan(x^2)/dx = 2x/(1+x^4).
    """
    x = np.asarray(x, dtype=float)
    _check_dims(spec, params, x)
    n = spec.n_qubits
    enc = encoding_angles(x)
    theta = params.angles

    p = spec.n_params
    out = simulate(spec, enc[..., None, :, :], _shifted(theta, 3))  # (..., 2p, n)
    d_theta = (out[..., :p, :] - out[..., p:, :]) / 2
    d_params = np.moveaxis(d_theta, -1, -2).reshape(x.shape[:-1] + (n,) + spec.param_shape)

    k = 2 * n
    out = simulate(spec, _shifted(enc, 2), theta)  # (..., 2k, n)
    d_enc = (out[..., :k, :] - out[..., k:, :]) / 2
    d_enc = np.moveaxis(d_enc, -1, -2).reshape(x.shape[:-1] + (n, n, 2))
    chain_ry = 1.0 / (1.0 + x * x)
    chain_rz = 2.0 * x / (1.0 + x**4)
    d_x = d_enc[..., 0] * chain_ry[..., None, :] + d_enc[..., 1] * chain_rz[..., None, :]
    return d_params, d_x
