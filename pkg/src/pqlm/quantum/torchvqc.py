"""Torch bridge: a VQC as a differentiable layer.

The forward pass runs the numpy simulator; the backward pass evaluates the
parameter-shift Jacobians, so autograd sees exact quantum gradients.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .vqc import CircuitSpec, VqcParams, simulate, encoding_angles, vqc_gradients


class _VqcFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u, angles, spec):
        u_np = u.detach().cpu().numpy()
        th = angles.detach().cpu().numpy()
        out = simulate(spec, encoding_angles(u_np), th)
        ctx.save_for_backward(u, angles)
        ctx.spec = spec
        return torch.from_numpy(np.ascontiguousarray(out)).to(dtype=u.dtype, device=u.device)

    @staticmethod
    def backward(ctx, grad_out):
        u, angles = ctx.saved_tensors
        need_u, need_angles, _ = ctx.needs_input_grad
        d_params, d_x = vqc_gradients(
            ctx.spec, VqcParams(angles.detach().cpu().numpy()), u.detach().cpu().numpy()
        )
        g = grad_out.detach().cpu().numpy()
        grad_u = grad_angles = None
        if need_u:
            grad_u = torch.from_numpy(np.einsum("...o,...oj->...j", g, d_x)).to(u)
        if need_angles:
            flat_g = g.reshape(-1, g.shape[-1])
            flat_d = d_params.reshape((-1,) + d_params.shape[-4:])
            grad_angles = torch.from_numpy(np.einsum("bo,bolqk->lqk", flat_g, flat_d)).to(angles)
        return grad_u, grad_angles, None


class VqcLayer(nn.Module):
    """Maps (..., n_qubits) inputs to (..., n_qubits) Z expectations."""

    def __init__(self, spec: CircuitSpec, params: VqcParams | None = None):
        super().__init__()
        self.spec = spec
        init = params.angles if params is not None else np.zeros(spec.param_shape)
        self.angles = nn.Parameter(torch.tensor(init, dtype=torch.float64))

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        return _VqcFunction.apply(u, self.angles, self.spec)

    def extra_repr(self) -> str:
        return f"n_qubits={self.spec.n_qubits}, n_layers={self.spec.n_layers}"
