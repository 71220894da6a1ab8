"""Tensor <-> JSON helpers for the checkpoint containers.

Tensors are stored as little-endian float64 bytes, base64 encoded, so that a
checkpoint is a deterministic function of the weights.
"""
from __future__ import annotations

import base64

import numpy as np
import torch


def encode_tensor(t: torch.Tensor) -> dict:
    arr = t.detach().cpu().numpy().astype("<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_tensor(d: dict) -> torch.Tensor:
    arr = np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"])
    return torch.from_numpy(arr.copy())
