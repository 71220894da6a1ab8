from .core import Gate, StateVector, apply_gate, expect_z, zero_state
from .vqc import CircuitSpec, VqcParams, build_circuit, encode, vqc_forward, vqc_gradients

__all__ = [
    "Gate",
    "StateVector",
    "apply_gate",
    "expect_z",
    "zero_state",
    "CircuitSpec",
    "VqcParams",
    "build_circuit",
    "encode",
    "vqc_forward",
    "vqc_gradients",
]
