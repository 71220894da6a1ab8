"""``pqlm`` command-line entry point.

Every subcommand that writes an artifact also writes ``<artifact>.manifest.json``
next to it recording the resolved config, seeds, inputs, git-style blob
hashes of the outputs and the wall-clock duration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .errors import PqlmError

log = logging.getLogger("pqlm")

SEED_ENV = "PQLM_SEED"
DEFAULT_MAX_CIRCUIT_EVALS = 50_000_000


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(path: Path, subcommand: str, config: dict, seeds: dict, inputs: dict, outputs: list, started: float) -> Path:
    outputs = [Path(p) for p in outputs]
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seeds": seeds,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {str(p): git_blob_hash(p.read_bytes()) for p in outputs if p.is_file()},
        "duration_s": round(time.time() - started, 3),
        "version": __version__,
    }
    target = Path(str(path) + ".manifest.json") if not Path(path).is_dir() else Path(path) / "manifest.json"
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return target


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise PqlmError(f"{path}: config file must hold a JSON object")
    return doc


def _resolve_seed(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        return flag
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _pick(cls, cfg: dict, overrides: dict):
    """Build a config dataclass: flags > config file > defaults."""
    names = {f.name for f in fields(cls)}
    kw = {k: v for k, v in cfg.items() if k in names}
    kw.update({k: v for k, v in overrides.items() if k in names and v is not None})
    return cls(**kw)


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    from .textprep import RawDocument, build_vocab, clean, read_corpus, read_labeled, write_corpus, write_labeled

    started = time.time()
    out = Path(args.out)
    if args.labeled:
        docs = [RawDocument(clean(d.text), d.label) for d in read_labeled(args.input)]
        docs = [d for d in docs if d.text]
        write_labeled(docs, out)
        texts = [d.text for d in docs]
    else:
        texts = [t for t in (clean(x) for x in read_corpus(args.input)) if t]
        write_corpus(texts, out)
    outputs = [out]
    if args.vocab_out:
        build_vocab(texts, args.max_vocab).save(args.vocab_out)
        outputs.append(Path(args.vocab_out))
    write_manifest(out, "preprocess", {"labeled": args.labeled, "max_vocab": args.max_vocab}, {}, {"input": args.input}, outputs, started)
    print(f"wrote {len(texts)} documents to {out}")
    return 0


def cmd_train_lm(args) -> int:
    from .langmodel import (
        ModelConfig,
        TrainConfig,
        estimate_circuit_evals,
        perplexity,
        save_checkpoint,
        split_holdout,
        train_lm,
    )
    from .textprep import read_corpus, tokenize

    started = time.time()
    cfg = _load_config_file(args.config)
    seed = _resolve_seed(args.seed, cfg)
    model_cfg = _pick(
        ModelConfig,
        cfg,
        {
            "backend": args.backend,
            "n_qubits": args.qubits,
            "n_layers": args.layers,
            "embed_dim": args.embed_dim,
            "hidden": args.hidden,
            "max_vocab": args.max_vocab,
        },
    )
    train_cfg = _pick(
        TrainConfig,
        cfg,
        {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "max_seq_len": args.max_seq_len,
            "lr": args.lr,
            "seed": seed,
            "eval_split": args.eval_split,
        },
    )
    docs = read_corpus(args.corpus)
    train_docs, eval_docs = docs, docs
    if train_cfg.eval_split == "holdout":
        train_docs, eval_docs = split_holdout(docs, train_cfg.holdout_fraction, train_cfg.seed)
    n_tokens = sum(min(len(tokenize(d)) + 1, train_cfg.max_seq_len - 1) for d in train_docs)
    budget = args.max_circuit_evals if args.max_circuit_evals is not None else cfg.get("max_circuit_evals", DEFAULT_MAX_CIRCUIT_EVALS)
    estimate = estimate_circuit_evals(model_cfg, train_cfg, n_tokens)
    if estimate > budget:
        log.warning("estimated %d circuit evaluations exceeds the budget of %d", estimate, budget)

    lm, history = train_lm(train_docs, train_cfg, model_cfg)
    out = Path(args.out)
    save_checkpoint(lm, out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    history.write_csv(loss_csv, smoothing=train_cfg.loss_smoothing)
    outputs = [out, loss_csv]
    if args.plot:
        from .ablation import write_svg_lines

        svg = out.with_suffix(".loss.svg")
        write_svg_lines({model_cfg.backend: [b[2] for b in history.batches]}, svg, title="training loss per batch")
        outputs.append(svg)
    ppl = perplexity(lm, eval_docs, train_cfg.max_seq_len)
    resolved = {"model": asdict(lm.config), "train": asdict(train_cfg)}
    resolved["model"].pop("circuit_seed", None)
    write_manifest(
        out,
        "train-lm",
        resolved,
        {"seed": train_cfg.seed},
        {"corpus": args.corpus},
        outputs,
        started,
    )
    counts = lm.backbone.param_count()
    print(
        json.dumps(
            {
                "final_loss": history.epochs[-1],
                "perplexity": ppl,
                "vocab_size": len(lm.vocab),
                "recurrent_params": counts._asdict(),
            }
        )
    )
    return 0


def cmd_export_embeddings(args) -> int:
    from .embedport import write_embeddings
    from .langmodel import extract_embeddings, load_checkpoint

    started = time.time()
    lm = load_checkpoint(args.checkpoint)
    matrix, vocab = extract_embeddings(lm)
    n = write_embeddings(matrix.values, vocab, args.out)
    write_manifest(Path(args.out), "export-embeddings", {}, {}, {"checkpoint": args.checkpoint}, [args.out], started)
    print(f"wrote {n} bytes to {args.out}")
    return 0


def cmd_train_classifier(args) -> int:
    from .downstream import ClassifierConfig, save_classifier, train_classifier
    from .textprep import read_labeled

    started = time.time()
    cfg = _load_config_file(args.config)
    seed = _resolve_seed(args.seed, cfg)
    clf_cfg = _pick(
        ClassifierConfig,
        cfg,
        {
            "blocks": args.blocks,
            "heads": args.heads,
            "finetune": True if args.finetune else None,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "seed": seed,
        },
    )
    docs = read_labeled(args.train)
    if args.lm_fraction is not None:
        import numpy as np

        rng = np.random.default_rng([seed, 0xF7])
        keep = max(1, int(round(args.lm_fraction * len(docs))))
        docs = [docs[k] for k in sorted(rng.permutation(len(docs))[:keep])]
    clf, losses = train_classifier(args.embeddings, docs, clf_cfg)
    save_classifier(clf, args.out)
    write_manifest(
        Path(args.out),
        "train-classifier",
        asdict(clf_cfg),
        {"seed": clf_cfg.seed},
        {"embeddings": args.embeddings, "train": args.train},
        [args.out],
        started,
    )
    print(json.dumps({"epoch_losses": losses}))
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    if args.classifier:
        from .downstream import label_ids, load_classifier, metrics_report, predict, write_metrics
        from .textprep import read_labeled

        if not args.test:
            raise PqlmError("--classifier needs --test")
        clf = load_classifier(args.classifier)
        docs = read_labeled(args.test)
        report = metrics_report(predict(clf, [d.text for d in docs]), label_ids(docs))
        inputs = {"classifier": args.classifier, "test": args.test}
    else:
        from .langmodel import corpus_nll, load_checkpoint
        from .textprep import read_corpus
        import math

        if not (args.lm and args.corpus):
            raise PqlmError("evaluate needs --classifier/--test or --lm/--corpus")
        lm = load_checkpoint(args.lm)
        loss = corpus_nll(lm, read_corpus(args.corpus))
        report = {"nll": loss, "perplexity": math.exp(loss)}
        inputs = {"lm": args.lm, "corpus": args.corpus}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        write_manifest(Path(args.out), "evaluate", {}, {}, inputs, [args.out], started)
    print(text)
    return 0


def cmd_serve(args) -> int:
    from .service import QlmServer

    cfg = _load_config_file(args.config)
    seed = args.server_seed if args.server_seed is not None else _resolve_seed(None, cfg)
    server = QlmServer(args.workdir, server_seed=seed, host=args.host, port=args.port)
    print(f"serving on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_submit_job(args) -> int:
    from .service import QlmClient
    from .textprep import read_corpus

    config = _load_config_file(args.config)
    job_id = QlmClient(args.server).submit(read_corpus(args.corpus), config)
    print(job_id)
    return 0


def cmd_fetch_embeddings(args) -> int:
    from .embedport import decode_embeddings
    from .service import QlmClient

    started = time.time()
    client = QlmClient(args.server)
    if args.wait:
        client.wait(args.job, timeout=args.timeout)
    data = client.fetch_embeddings(args.job)
    decode_embeddings(data)  # validates magic and CRC before anything lands on disk
    Path(args.out).write_bytes(data)
    write_manifest(Path(args.out), "fetch-embeddings", {}, {}, {"server": args.server, "job": args.job}, [args.out], started)
    print(f"wrote {len(data)} bytes to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    from .ablation import run_ablation
    from .langmodel import ModelConfig, TrainConfig
    from .textprep import read_corpus

    started = time.time()
    cfg = _load_config_file(args.config)
    seed = _resolve_seed(args.seed, cfg)
    corpora = {Path(p).stem: read_corpus(p) for p in args.corpus}
    if len(corpora) != len(args.corpus):
        raise PqlmError("corpus files must have distinct names")
    train_cfg = _pick(
        TrainConfig,
        cfg,
        {"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr, "seed": seed, "eval_split": args.eval_split},
    )
    model_cfg = _pick(
        ModelConfig, cfg, {"n_layers": args.layers, "embed_dim": args.embed_dim, "hidden": args.hidden}
    )
    backends = [b for b in args.backends.split(",") if b]
    qubits = [int(q) for q in args.qubits.split(",") if q]
    out = Path(args.out)
    rows = run_ablation(corpora, out, backends, qubits, train_cfg, model_cfg, plot=args.plot)
    outputs = sorted([out / "report.csv", *(out / "losses").glob("*.csv")])
    if args.plot:
        outputs.append(out / "first_epoch.svg")
    write_manifest(
        out,
        "ablate",
        {"train": asdict(train_cfg), "model": asdict(model_cfg), "backends": backends, "qubits": qubits},
        {"seed": seed},
        {f"corpus:{k}": p for k, p in zip(corpora, args.corpus)},
        outputs,
        started,
    )
    print(f"{len(rows)} cells written to {out / 'report.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pqlm", description="portable quantum language model pipeline")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("preprocess", help="clean a raw corpus")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--labeled", action="store_true", help="input is label<TAB>text")
    s.add_argument("--vocab-out")
    s.add_argument("--max-vocab", type=int, default=17000)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train-lm", help="train a language model locally")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--backend", choices=["quantum", "classical"])
    s.add_argument("--qubits", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--embed-dim", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--max-vocab", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--max-seq-len", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--eval-split", choices=["train", "holdout"])
    s.add_argument("--loss-csv")
    s.add_argument("--max-circuit-evals", type=int)
    s.add_argument("--plot", action="store_true")
    s.add_argument("--config")
    s.set_defaults(func=cmd_train_lm)

    s = sub.add_parser("export-embeddings", help="write the .pqlm file of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_embeddings)

    s = sub.add_parser("train-classifier", help="train the sentiment classifier")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--train", required=True, help="label<TAB>text file")
    s.add_argument("--out", required=True)
    s.add_argument("--blocks", type=int)
    s.add_argument("--heads", type=int)
    s.add_argument("--finetune", action="store_true", help="update the imported embeddings")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--lm-fraction", type=float, help="train on a random fraction of the documents")
    s.add_argument("--config")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("evaluate", help="classifier metrics or LM perplexity")
    s.add_argument("--classifier")
    s.add_argument("--test")
    s.add_argument("--lm")
    s.add_argument("--corpus")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("serve", help="run the mock quantum training server")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--workdir", required=True)
    s.add_argument("--server-seed", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("submit-job", help="upload a corpus to a training server")
    s.add_argument("--server", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--config", help="JSON training config")
    s.set_defaults(func=cmd_submit_job)

    s = sub.add_parser("fetch-embeddings", help="download a job's .pqlm export")
    s.add_argument("--server", required=True)
    s.add_argument("--job", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--wait", action="store_true")
    s.add_argument("--timeout", type=float, default=3600.0)
    s.set_defaults(func=cmd_fetch_embeddings)

    s = sub.add_parser("ablate", help="run a backend/qubit/corpus grid")
    s.add_argument("--corpus", action="append", required=True)
    s.add_argument("--backends", default="quantum")
    s.add_argument("--qubits", default="4,6")
    s.add_argument("--layers", type=int)
    s.add_argument("--embed-dim", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--eval-split", choices=["train", "holdout"])
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true")
    s.add_argument("--config")
    s.set_defaults(func=cmd_ablate)
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PqlmError, OSError, json.JSONDecodeError) as exc:
        print(f"pqlm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        from .service import ServiceError

        if isinstance(exc, ServiceError):
            print(f"pqlm {args.command}: error: {exc}", file=sys.stderr)
            return 1
        raise


def main() -> None:
    sys.exit(run())
