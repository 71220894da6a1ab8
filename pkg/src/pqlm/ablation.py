"""Grid runner for backend / qubit-count / corpus ablations."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from .errors import InputError
from .langmodel import ModelConfig, TrainConfig, perplexity, split_holdout, train_lm

REPORT_COLUMNS = [
    "corpus",
    "backend",
    "qubits",
    "hidden",
    "n_docs",
    "vocab_size",
    "state_dim",
    "final_loss",
    "perplexity",
    "classical_params",
    "quantum_params",
    "total_params",
]


@dataclass(frozen=True)
class Cell:
    corpus: str
    backend: str
    qubits: int | None = None

    @property
    def name(self) -> str:
        arch = f"{self.qubits}q" if self.backend == "quantum" else "classical"
        return f"{self.corpus}_{arch}"


def grid_cells(corpora: Sequence[str], backends: Sequence[str], qubits: Sequence[int]) -> list[Cell]:
    cells = []
    for corpus in corpora:
        for backend in backends:
            if backend == "quantum":
                cells += [Cell(corpus, backend, q) for q in qubits]
            else:
                cells.append(Cell(corpus, backend))
    if not cells:
        raise InputError("ablation grid is empty")
    return cells


def run_ablation(
    corpora: Mapping[str, Sequence[str]],
    out_dir,
    backends: Sequence[str] = ("quantum",),
    qubits: Sequence[int] = (4, 6),
    train: TrainConfig | None = None,
    model: ModelConfig | None = None,
    plot: bool = False,
) -> list[dict]:
    """Train every grid cell and write ``report.csv`` plus per-batch loss files.

    Wall-clock times go to ``timings.csv`` so that ``report.csv`` and the
    loss files are reproducible byte for byte.
    """
    train = train or TrainConfig()
    model = model or ModelConfig()
    cells = grid_cells(list(corpora), backends, qubits)
    out = Path(out_dir)
    (out / "losses").mkdir(parents=True, exist_ok=True)
    rows, timings, curves = [], [], {}
    for cell in cells:
        docs = list(corpora[cell.corpus])
        if not docs:
            raise InputError(f"corpus {cell.corpus!r} is empty")
        cfg = replace(model, backend=cell.backend, circuit_seed=None)
        if cell.qubits is not None:
            cfg = replace(cfg, n_qubits=cell.qubits)
        train_docs, eval_docs = docs, docs
        if train.eval_split == "holdout":
            train_docs, eval_docs = split_holdout(docs, train.holdout_fraction, train.seed)
        start = time.perf_counter()
        lm, history = train_lm(train_docs, train, cfg)
        ppl = perplexity(lm, eval_docs, train.max_seq_len)
        elapsed = time.perf_counter() - start
        counts = lm.backbone.param_count()
        history.write_csv(out / "losses" / f"{cell.name}.csv", smoothing=train.loss_smoothing)
        curves[cell.name] = history.first_epoch()
        rows.append(
            {
                "corpus": cell.corpus,
                "backend": cell.backend,
                "qubits": cell.qubits if cell.qubits is not None else "",
                "hidden": lm.config.hidden_dim,
                "n_docs": len(docs),
                "vocab_size": len(lm.vocab),
                "state_dim": 2**cell.qubits if cell.qubits is not None else "",
                "final_loss": repr(history.epochs[-1]),
                "perplexity": repr(ppl),
                "classical_params": counts.classical_params,
                "quantum_params": counts.quantum_params,
                "total_params": counts.total,
            }
        )
        timings.append({"cell": cell.name, "runtime_s": f"{elapsed:.3f}"})

    _write_csv(out / "report.csv", REPORT_COLUMNS, rows)
    _write_csv(out / "timings.csv", ["cell", "runtime_s"], timings)
    if plot:
        write_svg_lines(curves, out / "first_epoch.svg", title="first-epoch loss per batch")
    return rows


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def write_svg_lines(series: Mapping[str, Sequence[float]], path, title: str = "", width: int = 640, height: int = 400) -> None:
    """Minimal line chart, one polyline per series, x = index."""
    pad = 50
    values = [v for ys in series.values() for v in ys]
    if not values:
        raise InputError("nothing to plot")
    lo, hi = min(values), max(values)
    span = (hi - lo) or 1.0
    n_max = max(len(ys) for ys in series.values())

    def px(k):
        return pad + (width - 2 * pad) * (k / max(1, n_max - 1))

    def py(v):
        return height - pad - (height - 2 * pad) * ((v - lo) / span)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad - 5}" y="{pad}" text-anchor="end" font-size="10">{hi:.3g}</text>',
        f'<text x="{pad - 5}" y="{height - pad}" text-anchor="end" font-size="10">{lo:.3g}</text>',
    ]
    for k, (name, ys) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(ys))
        parts.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        parts.append(
            f'<text x="{width - pad + 5}" y="{pad + 14 * k}" font-size="10" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
