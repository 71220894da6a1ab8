"""Mock quantum training server and its client.

The server accepts corpora over HTTP, trains language models one job at a
time and releases nothing but the ``.pqlm`` embedding export. Routes::

    POST /v1/jobs                   {"documents": [...], "config": {...}}
    GET  /v1/jobs/{id}              job record view
    GET  /v1/jobs/{id}/embeddings   raw .pqlm bytes once converged

Errors are ``{"code": ..., "message": ...}``. The VQC circuit seed is
derived from the server seed and never leaves the server.
"""
from __future__ import annotations

import hashlib
import json
import logging
import queue
import re
import secrets
import threading
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

import numpy as np

from .embedport import encode_embeddings
from .langmodel import (
    ModelConfig,
    TrainConfig,
    checkpoint_bytes,
    extract_embeddings,
    train_lm,
)
from .textprep import preprocess

log = logging.getLogger(__name__)

QUEUED, RUNNING, CONVERGED, FAILED = "queued", "running", "converged", "failed"
TRANSITIONS = {QUEUED: {RUNNING}, RUNNING: {CONVERGED, FAILED}, CONVERGED: set(), FAILED: set()}

REDACTED = "REDACTED"
OCTET_STREAM = "application/octet-stream"

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"circuit_seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
CLIENT_KEYS = frozenset(_MODEL_KEYS | _TRAIN_KEYS)

_JOB_PATH = re.compile(r"^/v1/jobs/([^/]+)(/embeddings)?$")

_ERROR_STATUS = {
    "bad_request": HTTPStatus.BAD_REQUEST,
    "empty_corpus": HTTPStatus.BAD_REQUEST,
    "malformed_config": HTTPStatus.BAD_REQUEST,
    "job_not_found": HTTPStatus.NOT_FOUND,
    "not_found": HTTPStatus.NOT_FOUND,
    "method_not_allowed": HTTPStatus.METHOD_NOT_ALLOWED,
    "not_ready": HTTPStatus.CONFLICT,
    "internal": HTTPStatus.INTERNAL_SERVER_ERROR,
}


class ServiceError(Exception):
    """A protocol-level error, raised server-side and re-raised by the client."""

    def __init__(self, code: str, message: str, status: int | None = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.status = int(status if status is not None else _ERROR_STATUS.get(code, 500))

    def body(self) -> dict:
        return {"code": self.code, "message": self.message}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


# ---------------------------------------------------------------------------
# config handling shared by the server and local reproductions


def parse_config(raw: dict | None) -> tuple[TrainConfig, ModelConfig]:
    """Validate a client config dict; raises ServiceError(malformed_config)."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ServiceError("malformed_config", "config must be a JSON object")
    if "circuit_seed" in raw:
        raise ServiceError("malformed_config", "circuit seeds are assigned by the server")
    unknown = sorted(set(raw) - CLIENT_KEYS)
    if unknown:
        raise ServiceError("malformed_config", f"unknown config keys: {unknown}")
    train_kw = {k: v for k, v in raw.items() if k in _TRAIN_KEYS}
    model_kw = {k: v for k, v in raw.items() if k in _MODEL_KEYS}
    for cls, kw in ((TrainConfig, train_kw), (ModelConfig, model_kw)):
        defaults = cls()
        for k, v in kw.items():
            want = type(getattr(defaults, k))
            ok = isinstance(v, want) and not (want is int and isinstance(v, bool))
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                ok = True
            if not ok:
                raise ServiceError("malformed_config", f"{k} must be of type {want.__name__}")
    try:
        return TrainConfig(**train_kw), ModelConfig(**model_kw)
    except (TypeError, ValueError) as exc:
        raise ServiceError("malformed_config", str(exc)) from exc


def public_config(train: TrainConfig, model: ModelConfig) -> dict:
    """The config echo: every client-settable field, secret seed redacted."""
    echo = {k: v for k, v in asdict(train).items()}
    echo.update({k: v for k, v in asdict(model).items() if k != "circuit_seed"})
    echo["secret_seed"] = REDACTED
    return echo


def job_circuit_seed(server_seed: int, documents: list[str], train: TrainConfig, model: ModelConfig) -> int:
    """The private circuit seed of a job: a function of server seed and inputs."""
    digest = hashlib.sha256()
    digest.update(json.dumps(documents, ensure_ascii=False).encode("utf-8"))
    digest.update(json.dumps(public_config(train, model), sort_keys=True).encode("utf-8"))
    words = np.frombuffer(digest.digest(), dtype="<u4").tolist()
    ss = np.random.SeedSequence([server_seed] + words)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_training(documents: list[str], train: TrainConfig, model: ModelConfig, server_seed: int, progress=None):
    """Clean, train and export exactly as a server job does.

    Returns ``(model, history, pqlm_bytes)``.
    """
    docs = preprocess(documents)
    seed = job_circuit_seed(server_seed, docs, train, model)
    cfg = ModelConfig(**{**asdict(model), "circuit_seed": seed}) if model.backend == "quantum" else model
    lm, history = train_lm(docs, train, cfg, progress=progress)
    matrix, vocab = extract_embeddings(lm)
    return lm, history, encode_embeddings(matrix.values, vocab)


# ---------------------------------------------------------------------------
# job store


@dataclass
class JobRecord:
    job_id: str
    seq: int
    config: dict
    state: str = QUEUED
    progress: dict = field(default_factory=lambda: {"epoch": 0, "batch": 0, "last_loss": None})
    created_at: str = field(default_factory=_now)
    updated_at: str = field(default_factory=_now)
    error: str | None = None

    def view(self) -> dict:
        """The externally visible representation."""
        out = {
            "job_id": self.job_id,
            "state": self.state,
            "progress": dict(self.progress),
            "config": dict(self.config),
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


class JobStore:
    """Directory-per-job persistence; every mutation happens under one lock."""

    def __init__(self, workdir: Path):
        self.root = Path(workdir) / "jobs"
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self.jobs: dict[str, JobRecord] = {}
        self._seq = 0
        for manifest in sorted(self.root.glob("*/manifest.json")):
            rec = JobRecord(**json.loads(manifest.read_text(encoding="utf-8")))
            self.jobs[rec.job_id] = rec
            self._seq = max(self._seq, rec.seq + 1)

    def job_dir(self, job_id: str) -> Path:
        return self.root / job_id

    def _persist(self, rec: JobRecord) -> None:
        path = self.job_dir(rec.job_id) / "manifest.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(asdict(rec), sort_keys=True, indent=2), encoding="utf-8")
        tmp.replace(path)

    def create(self, documents: list[str], config: dict) -> JobRecord:
        with self.lock:
            job_id = secrets.token_hex(16)
            rec = JobRecord(job_id=job_id, seq=self._seq, config=config)
            self._seq += 1
            d = self.job_dir(job_id)
            d.mkdir()
            (d / "corpus.json").write_text(json.dumps(documents, ensure_ascii=False), encoding="utf-8")
            self._persist(rec)
            self.jobs[job_id] = rec
            return rec

    def get_view(self, job_id: str) -> dict:
        with self.lock:
            rec = self.jobs.get(job_id)
            if rec is None:
                raise ServiceError("job_not_found", f"no job {job_id}")
            return rec.view()

    def transition(self, job_id: str, state: str, error: str | None = None) -> None:
        with self.lock:
            rec = self.jobs[job_id]
            if state not in TRANSITIONS[rec.state]:
                raise RuntimeError(f"illegal transition {rec.state} -> {state}")
            rec.state = state
            rec.error = error
            rec.updated_at = _now()
            self._persist(rec)

    def set_progress(self, job_id: str, epoch: int, batch: int, loss: float) -> None:
        with self.lock:
            rec = self.jobs[job_id]
            rec.progress = {"epoch": epoch, "batch": batch, "last_loss": loss}
            rec.updated_at = _now()

    def pending(self) -> list[str]:
        """Queued job ids in submission order."""
        with self.lock:
            return [r.job_id for r in sorted(self.jobs.values(), key=lambda r: r.seq) if r.state == QUEUED]

    def stale_running(self) -> list[str]:
        with self.lock:
            return [r.job_id for r in self.jobs.values() if r.state == RUNNING]


# ---------------------------------------------------------------------------
# server


class QlmServer:
    """One simulated quantum device: a FIFO queue drained by a single trainer."""

    def __init__(self, workdir, server_seed: int = 0, host: str = "127.0.0.1", port: int = 0):
        self.server_seed = int(server_seed)
        self.store = JobStore(Path(workdir))
        self.queue: queue.Queue[str | None] = queue.Queue()
        for job_id in self.store.stale_running():
            self.store.transition(job_id, FAILED, "interrupted by server restart")
        for job_id in self.store.pending():
            self.queue.put(job_id)
        self.httpd = ThreadingHTTPServer((host, port), _make_handler(self))
        self.httpd.daemon_threads = True
        self._threads: list[threading.Thread] = []

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    # request handlers -----------------------------------------------------

    def submit(self, body: Any) -> dict:
        if not isinstance(body, dict):
            raise ServiceError("bad_request", "body must be a JSON object")
        documents = body.get("documents")
        if not isinstance(documents, list) or not all(isinstance(d, str) for d in documents):
            raise ServiceError("bad_request", "documents must be a list of strings")
        config = body.get("config", {})
        if not isinstance(config, dict):
            raise ServiceError("malformed_config", "config must be a JSON object")
        train, model = parse_config(config)
        if not preprocess(documents):
            raise ServiceError("empty_corpus", "no non-empty documents after cleaning")
        rec = self.store.create(documents, public_config(train, model))
        self.queue.put(rec.job_id)
        return rec.view()

    def embeddings(self, job_id: str) -> bytes:
        view = self.store.get_view(job_id)
        if view["state"] != CONVERGED:
            raise ServiceError("not_ready", f"job is {view['state']}")
        return (self.store.job_dir(job_id) / "embeddings.pqlm").read_bytes()

    # trainer --------------------------------------------------------------

    def _train(self, job_id: str) -> None:
        d = self.store.job_dir(job_id)
        documents = json.loads((d / "corpus.json").read_text(encoding="utf-8"))
        config = {k: v for k, v in self.store.get_view(job_id)["config"].items() if k in CLIENT_KEYS}
        train, model = parse_config(config)
        self.store.transition(job_id, RUNNING)
        try:
            lm, history, blob = run_training(
                documents,
                train,
                model,
                self.server_seed,
                progress=lambda e, b, loss: self.store.set_progress(job_id, e, b, loss),
            )
            (d / "checkpoint.json").write_bytes(checkpoint_bytes(lm))
            history.write_csv(d / "loss.csv", smoothing=train.loss_smoothing)
            (d / "embeddings.pqlm").write_bytes(blob)
        except Exception as exc:  # a failed job must not take the trainer down
            log.exception("job %s failed", job_id)
            self.store.transition(job_id, FAILED, f"{type(exc).__name__}: {exc}")
            return
        self.store.transition(job_id, CONVERGED)

    def _trainer_loop(self) -> None:
        while True:
            job_id = self.queue.get()
            if job_id is None:
                return
            self._train(job_id)

    # lifecycle ------------------------------------------------------------

    def start(self) -> "QlmServer":
        for target in (self.httpd.serve_forever, self._trainer_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        trainer = threading.Thread(target=self._trainer_loop, daemon=True)
        trainer.start()
        try:
            self.httpd.serve_forever()
        finally:
            self.queue.put(None)
            self.httpd.server_close()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.queue.put(None)
        for t in self._threads:
            t.join(timeout=60)

    def __enter__(self) -> "QlmServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def _make_handler(server: QlmServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s - " + fmt, self.address_string(), *args)

        def _send(self, status: int, payload: bytes, ctype: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def _json(self, status: int, obj: dict) -> None:
            self._send(status, json.dumps(obj, sort_keys=True).encode("utf-8"), "application/json; charset=utf-8")

        def _dispatch(self, method: str) -> None:
            try:
                if self.path == "/v1/jobs":
                    if method != "POST":
                        raise ServiceError("method_not_allowed", f"{method} not allowed here")
                    self._json(HTTPStatus.CREATED, server.submit(self._body()))
                    return
                m = _JOB_PATH.match(self.path)
                if m is None:
                    raise ServiceError("not_found", f"no route for {self.path}")
                if method != "GET":
                    raise ServiceError("method_not_allowed", f"{method} not allowed here")
                job_id, sub = m.groups()
                if sub:
                    self._send(HTTPStatus.OK, server.embeddings(job_id), OCTET_STREAM)
                else:
                    self._json(HTTPStatus.OK, server.store.get_view(job_id))
            except ServiceError as err:
                self._json(err.status, err.body())
            except Exception as exc:
                log.exception("unhandled error")
                self._json(500, {"code": "internal", "message": type(exc).__name__})

        def _body(self) -> Any:
            n = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(n)
            try:
                return json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise ServiceError("bad_request", "body is not valid UTF-8 JSON") from exc

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        def do_PUT(self):
            self._dispatch("PUT")

        def do_DELETE(self):
            self._dispatch("DELETE")

    return Handler


# ---------------------------------------------------------------------------
# client


class QlmClient:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, body: dict | None = None) -> tuple[bytes, str]:
        data = None if body is None else json.dumps(body).encode("utf-8")
        req = urllib.request.Request(self.base_url + path, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", "application/json; charset=utf-8")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read(), resp.headers.get("Content-Type", "")
        except urllib.error.HTTPError as err:
            payload = err.read()
            try:
                doc = json.loads(payload)
                raise ServiceError(doc["code"], doc["message"], err.code) from None
            except (ValueError, KeyError):
                raise ServiceError("http_error", payload.decode("utf-8", "replace"), err.code) from None

    def submit(self, documents: list[str], config: dict | None = None) -> str:
        raw, _ = self._request("POST", "/v1/jobs", {"documents": list(documents), "config": config or {}})
        return json.loads(raw)["job_id"]

    def status(self, job_id: str) -> dict:
        raw, _ = self._request("GET", f"/v1/jobs/{job_id}")
        return json.loads(raw)

    def wait(self, job_id: str, timeout: float = 600.0, poll: float = 0.1) -> dict:
        """Poll until the job leaves queued/running; returns the final view."""
        deadline = time.monotonic() + timeout
        while True:
            view = self.status(job_id)
            if view["state"] in (CONVERGED, FAILED):
                return view
            if time.monotonic() > deadline:
                raise TimeoutError(f"job {job_id} still {view['state']} after {timeout}s")
            time.sleep(poll)

    def fetch_embeddings(self, job_id: str) -> bytes:
        raw, _ = self._request("GET", f"/v1/jobs/{job_id}/embeddings")
        return raw
