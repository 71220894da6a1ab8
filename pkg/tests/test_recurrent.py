import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import lstm_reference, qlstm_reference
from pqlm.errors import ConfigurationError, InputError
from pqlm.recurrent import (
    GATE_TAGS,
    ClassicalLstmCell,
    QLstmCell,
    RecurrentState,
    gate_seed,
    lstm_step,
    param_count,
    qlstm_step,
    sequence_forward,
)

SIG1 = 1 / (1 + math.exp(-1))


def _zero_quantum(cell: QLstmCell):
    with torch.no_grad():
        cell.proj_weight.zero_()
        cell.proj_bias.zero_()
        for vqc in cell.vqcs.values():
            vqc.angles.zero_()


def _oracle_args(cell: QLstmCell):
    return (
        cell.proj_weight.detach().numpy(),
        cell.proj_bias.detach().numpy(),
        [(cell.vqcs[t].spec, cell.vqcs[t].angles.detach().numpy()) for t in GATE_TAGS],
    )


def test_zero_quantum_cell(rng):
    cell = QLstmCell(embed_dim=6, n_qubits=3, seed=1)
    _zero_quantum(cell)
    c_prev = torch.tensor(rng.normal(size=3))
    f, i, g, o = cell.gates(torch.tensor(rng.normal(size=(1, 6))), torch.zeros(1, 3))
    for gate in (f, i, o):
        assert torch.allclose(gate, torch.full_like(gate, 0.5), atol=1e-9)
    assert torch.max(torch.abs(g)) < 1e-9
    out = qlstm_step(cell, rng.normal(size=6), RecurrentState(torch.zeros(3), c_prev))
    assert torch.allclose(out.c, 0.5 * c_prev, atol=1e-9)
    assert torch.allclose(out.h, 0.5 * torch.tanh(0.5 * c_prev), atol=1e-9)


def test_two_qubit_step_matches_oracle(rng):
    cell = QLstmCell(embed_dim=3, n_qubits=2, n_layers=2, seed=17)
    x, h, c = rng.normal(size=3), rng.normal(size=2) * 0.5, rng.normal(size=2)
    out = qlstm_step(cell, x, RecurrentState(torch.tensor(h), torch.tensor(c)))
    h_ref, c_ref = qlstm_reference(x, h, c, *_oracle_args(cell))
    assert np.max(np.abs(out.h.detach().numpy() - h_ref)) < 1e-10
    assert np.max(np.abs(out.c.detach().numpy() - c_ref)) < 1e-10


def test_classical_zero_weights(rng):
    cell = ClassicalLstmCell(embed_dim=4, hidden_dim=3)
    with torch.no_grad():
        cell.weight.zero_()
        cell.bias.zero_()
    f, i, g, o = cell.gates(torch.tensor(rng.normal(size=(2, 4))), torch.tensor(rng.normal(size=(2, 3))))
    for gate in (f, i, o):
        assert torch.all(gate == 0.5)
    assert torch.all(g == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_classical_matches_textbook(seed):
    rng = np.random.default_rng(seed)
    cell = ClassicalLstmCell(embed_dim=4, hidden_dim=3, seed=seed)
    x, h, c = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
    out = lstm_step(cell, x, RecurrentState(torch.tensor(h), torch.tensor(c)))
    h_ref, c_ref = lstm_reference(x, h, c, cell.weight.detach().numpy(), cell.bias.detach().numpy())
    assert np.max(np.abs(out.h.detach().numpy() - h_ref)) < 1e-12
    assert np.max(np.abs(out.c.detach().numpy() - c_ref)) < 1e-12


def test_classical_output_shape(rng):
    cell = ClassicalLstmCell(embed_dim=64, hidden_dim=5)
    assert lstm_step(cell, rng.normal(size=64)).h.shape == (5,)


def test_single_step_equals_step_from_zero(rng):
    cell = QLstmCell(embed_dim=5, n_qubits=2, seed=3)
    x = rng.normal(size=5)
    (only,) = sequence_forward(cell, [x])
    direct = qlstm_step(cell, x)
    assert torch.equal(only.h, direct.h) and torch.equal(only.c, direct.c)


def test_sequence_length_and_prefix(rng):
    cell = ClassicalLstmCell(embed_dim=4, hidden_dim=3)
    xs = torch.tensor(rng.normal(size=(5, 4)))
    full = sequence_forward(cell, xs)
    assert len(full) == 5
    prefix = sequence_forward(cell, xs[:3])
    for a, b in zip(full[:3], prefix):
        assert torch.equal(a.h, b.h) and torch.equal(a.c, b.c)


def test_sequence_batched(rng):
    cell = QLstmCell(embed_dim=4, n_qubits=2, seed=5)
    xs = torch.tensor(rng.normal(size=(3, 2, 4)))
    states = sequence_forward(cell, xs)
    assert states[-1].h.shape == (2, 2)
    lone = sequence_forward(cell, xs[:, 1])
    assert torch.allclose(states[-1].h[1], lone[-1].h, atol=1e-14)


def test_sequence_empty():
    with pytest.raises(InputError):
        sequence_forward(ClassicalLstmCell(4, 2), [])


def test_shape_mismatch_errors(rng):
    cell = QLstmCell(embed_dim=4, n_qubits=2)
    with pytest.raises(ConfigurationError):
        qlstm_step(cell, rng.normal(size=5))
    with pytest.raises(ConfigurationError):
        qlstm_step(cell, rng.normal(size=4), RecurrentState(torch.zeros(3), torch.zeros(3)))
    with pytest.raises(ConfigurationError):
        lstm_step(cell, rng.normal(size=4))
    with pytest.raises(ConfigurationError):
        qlstm_step(ClassicalLstmCell(4, 2), rng.normal(size=4))


@pytest.mark.parametrize(
    "cell,expected",
    [
        (ClassicalLstmCell(64, 5), (1400, 0, 1400)),
        (QLstmCell(64, 4, 2), (276, 96, 372)),
        (QLstmCell(64, 6, 2), (426, 144, 570)),
    ],
)
def test_param_count(cell, expected):
    assert tuple(param_count(cell)) == expected
    # the closed form agrees with the tensors actually held
    assert sum(p.numel() for p in cell.parameters()) == expected[2]


def test_param_ratio_within_order_of_magnitude():
    q = param_count(QLstmCell(64, 4, 2)).total
    c = param_count(ClassicalLstmCell(64, 5)).total
    assert max(q, c) / min(q, c) < 10


def test_gate_seeds_independent():
    seeds = {gate_seed(7, t) for t in GATE_TAGS}
    assert len(seeds) == 4
    cell = QLstmCell(8, 4, 2, seed=7)
    layouts = {cell.vqcs[t].spec.entanglement for t in GATE_TAGS}
    assert len(layouts) > 1
    assert gate_seed(7, "forget") == gate_seed(7, "forget")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quantum_gate_bounds(seed):
    rng = np.random.default_rng(seed)
    cell = QLstmCell(embed_dim=4, n_qubits=3, seed=seed)
    with torch.no_grad():
        cell.proj_weight.mul_(20)
    f, i, g, o = cell.gates(torch.tensor(rng.normal(scale=10, size=(8, 4))), torch.tensor(rng.normal(size=(8, 3))))
    for gate in (f, i, o):
        assert torch.all(gate >= 1 - SIG1 - 1e-12) and torch.all(gate <= SIG1 + 1e-12)
    assert torch.all(torch.abs(g) <= math.tanh(1) + 1e-12)


def test_cell_state_bounded_over_1000_steps(rng):
    cell = QLstmCell(embed_dim=3, n_qubits=2, n_layers=1, seed=4)
    state = cell.zero_state(1)
    limit = SIG1 * math.tanh(1) / (1 - SIG1)
    with torch.no_grad():
        for _ in range(1000):
            prev = state.c.abs()
            state = cell(torch.tensor(rng.normal(scale=3, size=(1, 3))), state)
            bound = torch.maximum(prev, prev * SIG1 + SIG1 * math.tanh(1))
            assert torch.all(state.c.abs() <= bound + 1e-12)
    assert torch.all(state.c.abs() <= limit + 1e-9)
    assert torch.all(torch.isfinite(state.h))


def _bptt_loss(cell, xs, readout):
    states = sequence_forward(cell, xs)
    return sum((s.h * readout).sum() for s in states)


def test_bptt_matches_finite_differences(rng):
    cell = QLstmCell(embed_dim=3, n_qubits=2, n_layers=2, seed=21)
    xs = torch.tensor(rng.normal(size=(3, 3)))
    readout = torch.tensor(rng.normal(size=2))
    loss = _bptt_loss(cell, xs, readout)
    grads = torch.autograd.grad(loss, list(cell.parameters()))
    h = 1e-6
    with torch.no_grad():
        for p, g in zip(cell.parameters(), grads):
            flat, gflat = p.view(-1), g.reshape(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                up = _bptt_loss(cell, xs, readout).item()
                flat[k] = orig - h
                dn = _bptt_loss(cell, xs, readout).item()
                flat[k] = orig
                fd = (up - dn) / (2 * h)
                assert abs(gflat[k].item() - fd) <= 1e-4 * abs(fd) + 1e-9

