"""Dense statevector simulation for small qubit registers.

Qubit 0 addresses the least-significant bit of the amplitude index. The
public single-state API (:func:`zero_state`, :func:`apply_gate`,
:func:`expect_z`) validates everything it touches; the ``*_batch`` kernels
below it skip validation and operate on arrays of shape ``(..., 2**n)`` so
that many circuits can be pushed through in one numpy call.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import sqrt

import numpy as np

from ..errors import ConfigurationError, NumericError

MAX_QUBITS = 12
NORM_TOL = 1e-9

GATE_KINDS = ("H", "RX", "RY", "RZ", "CNOT")
ROTATIONS = ("RX", "RY", "RZ")

_H = np.array([[1, 1], [1, -1]], dtype=complex) / sqrt(2)


def _check_n_qubits(n_qubits: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(
            f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits!r}"
        )


def _check_index(qubit: int, n_qubits: int) -> None:
    if not isinstance(qubit, (int, np.integer)) or not 0 <= qubit < n_qubits:
        raise IndexError(f"qubit index {qubit!r} out of range for {n_qubits} qubits")


# ---------------------------------------------------------------------------
# gate matrices (angles may be arrays; the matrix axes are the last two)


def rx_matrix(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    m = np.empty(theta.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 0, 1] = -1j * s
    m[..., 1, 0] = -1j * s
    m[..., 1, 1] = c
    return m


def ry_matrix(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    m = np.empty(theta.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c
    m[..., 0, 1] = -s
    m[..., 1, 0] = s
    m[..., 1, 1] = c
    return m


def rz_matrix(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    m = np.zeros(theta.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = np.exp(-0.5j * theta)
    m[..., 1, 1] = np.exp(0.5j * theta)
    return m


ROTATION_MATRIX = {"RX": rx_matrix, "RY": ry_matrix, "RZ": rz_matrix}

# |control target> basis, control is the high bit
_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    angle: float | None = None
    control: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ConfigurationError(f"unknown gate kind {self.kind!r}")
        if (self.kind in ROTATIONS) != (self.angle is not None):
            raise ConfigurationError(f"{self.kind} gate: angle must be given iff rotation")
        if (self.kind == "CNOT") != (self.control is not None):
            raise ConfigurationError(f"{self.kind} gate: control must be given iff CNOT")
        if self.target < 0 or (self.control is not None and self.control < 0):
            raise IndexError("qubit indices must be non-negative")
        if self.control is not None and self.control == self.target:
            raise ConfigurationError("CNOT control and target must differ")

    @classmethod
    def h(cls, target: int) -> "Gate":
        return cls("H", target)

    @classmethod
    def rx(cls, target: int, angle: float) -> "Gate":
        return cls("RX", target, angle=float(angle))

    @classmethod
    def ry(cls, target: int, angle: float) -> "Gate":
        return cls("RY", target, angle=float(angle))

    @classmethod
    def rz(cls, target: int, angle: float) -> "Gate":
        return cls("RZ", target, angle=float(angle))

    @classmethod
    def cnot(cls, control: int, target: int) -> "Gate":
        return cls("CNOT", target, control=control)

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)

    def matrix(self) -> np.ndarray:
        """The 2x2 matrix, or the 4x4 CNOT matrix in the |control target> basis."""
        if self.kind == "H":
            return _H.copy()
        if self.kind == "CNOT":
            return _CNOT.copy()
        return ROTATION_MATRIX[self.kind](self.angle)


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_n_qubits(self.n_qubits)
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2**self.n_qubits:
            raise ConfigurationError(
                f"expected {2 ** self.n_qubits} amplitudes, got {amps.shape[0]}"
            )
        if not np.all(np.isfinite(amps)):
            raise NumericError("amplitudes must be finite")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise NumericError(f"state is not normalized (norm={norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def zero_state(n_qubits: int) -> StateVector:
    """|0...0> on ``n_qubits`` qubits."""
    _check_n_qubits(n_qubits)
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(int(n_qubits), amps)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    n = state.n_qubits
    for q in gate.qubits:
        _check_index(q, n)
    amps = state.amplitudes[np.newaxis, :]
    if gate.kind == "CNOT":
        out = apply_cnot_batch(amps, gate.control, gate.target)
    else:
        out = apply_1q_batch(amps, gate.matrix(), gate.target)
    # StateVector re-checks the norm against NORM_TOL
    return StateVector(n, out[0])


def expect_z(state: StateVector, qubit: int) -> float:
    """<psi| Z_qubit |psi>."""
    _check_index(qubit, state.n_qubits)
    probs = np.abs(state.amplitudes) ** 2
    signs = z_signs(state.n_qubits)[:, qubit]
    return float(np.clip(probs @ signs, -1.0, 1.0))


# ---------------------------------------------------------------------------
# batched kernels


def apply_1q_batch(amps: np.ndarray, matrix: np.ndarray, target: int) -> np.ndarray:
    """Apply a single-qubit matrix to ``amps`` of shape (..., 2**n).

    ``matrix`` is either (2, 2) or (..., 2, 2) with leading axes matching
    (or broadcasting against) the leading axes of ``amps``.
    """
    dim = amps.shape[-1]
    lo = 1 << target
    view = amps.reshape(amps.shape[:-1] + (dim // (2 * lo), 2, lo))
    a0 = view[..., 0, :]
    a1 = view[..., 1, :]
    m = np.asarray(matrix)
    # broadcast matrix entries over the (hi, lo) axes
    m00 = m[..., 0, 0, None, None]
    m01 = m[..., 0, 1, None, None]
    m10 = m[..., 1, 0, None, None]
    m11 = m[..., 1, 1, None, None]
    out = np.empty(np.broadcast_shapes(view.shape, m.shape[:-2] + (1, 1, 1)), dtype=complex)
    out[..., 0, :] = m00 * a0 + m01 * a1
    out[..., 1, :] = m10 * a0 + m11 * a1
    return out.reshape(out.shape[:-3] + (dim,))


@lru_cache(maxsize=None)
def cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    flip = ((idx >> control) & 1).astype(bool)
    perm = idx.copy()
    perm[flip] = idx[flip] ^ (1 << target)
    perm.setflags(write=False)
    return perm


def apply_cnot_batch(amps: np.ndarray, control: int, target: int) -> np.ndarray:
    n = amps.shape[-1].bit_length() - 1
    return amps[..., cnot_permutation(n, control, target)]


@lru_cache(maxsize=None)
def z_signs(n_qubits: int) -> np.ndarray:
    """(2**n, n) matrix of Z eigenvalues: +1 where the qubit's bit is 0."""
    idx = np.arange(2**n_qubits)[:, None]
    bits = (idx >> np.arange(n_qubits)[None, :]) & 1
    signs = 1.0 - 2.0 * bits
    signs.setflags(write=False)
    return signs


def expect_z_batch(amps: np.ndarray) -> np.ndarray:
    """All single-qubit Z expectations, shape (..., n)."""
    n = amps.shape[-1].bit_length() - 1
    probs = amps.real**2 + amps.imag**2
    return probs @ z_signs(n)
