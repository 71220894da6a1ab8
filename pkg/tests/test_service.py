import json
import re
import threading
import urllib.request

import numpy as np
import pytest

from pqlm import service
from pqlm.embedport import decode_embeddings
from pqlm.langmodel import ModelConfig, TrainConfig
from pqlm.recurrent import GATE_TAGS
from pqlm.service import (
    CLIENT_KEYS,
    QlmClient,
    QlmServer,
    ServiceError,
    job_circuit_seed,
    parse_config,
    public_config,
    run_training,
)
from pqlm.synthetic import template_corpus
from pqlm.textprep import preprocess

FORBIDDEN = {"circuit_seed", "entanglement", "vqc_params", "angles"}
TINY = {"epochs": 2, "batch_size": 4, "embed_dim": 4, "n_qubits": 2, "n_layers": 1, "seed": 3}
DOCS = template_corpus(8, seed=5)
VIEW_KEYS = {"job_id", "state", "progress", "config", "created_at", "updated_at"}


@pytest.fixture
def server(tmp_path):
    with QlmServer(tmp_path / "work", server_seed=11) as srv:
        yield srv


@pytest.fixture
def gate(monkeypatch):
    """Hold every training job at the start until the event is set."""
    release = threading.Event()
    started = threading.Event()
    real = service.run_training

    def held(*args, **kw):
        started.set()
        assert release.wait(60)
        return real(*args, **kw)

    monkeypatch.setattr(service, "run_training", held)
    yield release, started
    release.set()


def raw_get(url):
    try:
        with urllib.request.urlopen(url) as resp:
            return resp.status, resp.headers["Content-Type"], resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.headers["Content-Type"], err.read()


def test_submit_returns_job_id_and_queued(server, gate):
    release, _ = gate
    client = QlmClient(server.url)
    raw, _ = client._request("POST", "/v1/jobs", {"documents": DOCS, "config": TINY})
    view = json.loads(raw)
    assert re.fullmatch(r"[0-9a-f]{32}", view["job_id"])
    assert view["state"] == "queued"
    assert set(view) == VIEW_KEYS


def test_empty_corpus_rejected(server):
    client = QlmClient(server.url)
    for docs in ([], ["", "   ", "http://x.y"]):
        with pytest.raises(ServiceError) as exc:
            client.submit(docs, TINY)
        assert exc.value.code == "empty_corpus" and exc.value.status == 400


@pytest.mark.parametrize(
    "config",
    [{"circuit_seed": 5}, {"epochs": "many"}, {"bogus": 1}, {"epochs": 0}, {"backend": "analog"}, {"epochs": True}],
)
def test_malformed_config(server, config):
    with pytest.raises(ServiceError) as exc:
        QlmClient(server.url).submit(DOCS, config)
    assert exc.value.code == "malformed_config"


def test_bad_requests(server):
    client = QlmClient(server.url)
    with pytest.raises(ServiceError) as exc:
        client._request("POST", "/v1/jobs", {"documents": "not a list"})
    assert exc.value.code == "bad_request"
    with pytest.raises(ServiceError) as exc:
        client.status("f" * 32)
    assert exc.value.code == "job_not_found" and exc.value.status == 404
    with pytest.raises(ServiceError) as exc:
        client.fetch_embeddings("nope")
    assert exc.value.code == "job_not_found"
    with pytest.raises(ServiceError) as exc:
        client._request("GET", "/v2/other")
    assert exc.value.code == "not_found"
    with pytest.raises(ServiceError) as exc:
        client._request("GET", "/v1/jobs")
    assert exc.value.code == "method_not_allowed"
    req = urllib.request.Request(server.url + "/v1/jobs", data=b"{nope", method="POST")
    with pytest.raises(urllib.error.HTTPError) as err:
        urllib.request.urlopen(req)
    assert json.loads(err.value.read())["code"] == "bad_request"


def test_fifo_and_not_ready(server, gate):
    release, started = gate
    client = QlmClient(server.url)
    first = client.submit(DOCS, TINY)
    second = client.submit(DOCS, {**TINY, "seed": 4})
    assert started.wait(30)
    assert client.status(first)["state"] == "running"
    assert client.status(second)["state"] == "queued"
    with pytest.raises(ServiceError) as exc:
        client.fetch_embeddings(first)
    assert exc.value.code == "not_ready" and exc.value.status == 409
    with pytest.raises(ServiceError):
        client.fetch_embeddings(second)
    release.set()
    assert client.wait(first, timeout=120)["state"] == "converged"
    assert client.wait(second, timeout=120)["state"] == "converged"
    views = [client.status(j) for j in (first, second)]
    assert views[0]["updated_at"] <= views[1]["updated_at"]


def test_converged_job_and_fetch(server):
    client = QlmClient(server.url)
    job = client.submit(DOCS, TINY)
    view = client.wait(job, timeout=120)
    assert view["state"] == "converged"
    assert view["progress"]["epoch"] == TINY["epochs"]
    status, ctype, blob = raw_get(f"{server.url}/v1/jobs/{job}/embeddings")
    assert status == 200 and ctype == "application/octet-stream"
    matrix, vocab = decode_embeddings(blob)
    assert matrix.shape == (len(vocab), TINY["embed_dim"])
    job_dir = server.store.job_dir(job)
    assert blob == (job_dir / "embeddings.pqlm").read_bytes()
    assert (job_dir / "checkpoint.json").exists() and (job_dir / "loss.csv").exists()


def test_fetched_bytes_match_local_run(server):
    client = QlmClient(server.url)
    job = client.submit(DOCS, TINY)
    client.wait(job, timeout=120)
    train, model = parse_config(TINY)
    _, _, local = run_training(DOCS, train, model, server_seed=11)
    assert client.fetch_embeddings(job) == local
    _, _, other_seed = run_training(DOCS, train, model, server_seed=12)
    assert other_seed != local


def test_same_inputs_same_artifact_across_servers(tmp_path):
    blobs = []
    for k in range(2):
        with QlmServer(tmp_path / f"w{k}", server_seed=11) as srv:
            client = QlmClient(srv.url)
            job = client.submit(DOCS, TINY)
            client.wait(job, timeout=120)
            blobs.append(client.fetch_embeddings(job))
    assert blobs[0] == blobs[1]


class _Recorder(QlmClient):
    """Client that keeps every raw response body."""

    def __init__(self, url):
        super().__init__(url)
        self.bodies = []

    def _request(self, method, path, body=None):
        try:
            raw, ctype = super()._request(method, path, body)
        except ServiceError as err:
            self.bodies.append(("application/json", json.dumps(err.body()).encode()))
            raise
        self.bodies.append((ctype, raw))
        return raw, ctype


def _walk_keys(obj):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield k
            yield from _walk_keys(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _walk_keys(v)


def test_privacy_surface(server):
    client = _Recorder(server.url)
    job = client.submit(DOCS, TINY)
    seen_states = set()
    while True:
        try:
            client.fetch_embeddings(job)
            break
        except ServiceError:
            state = client.status(job)["state"]
            assert state != "failed"
            seen_states.add(state)
    for bad in ({}, {"circuit_seed": 1}):
        with pytest.raises(ServiceError):
            client.submit([] if not bad else DOCS, bad)
    with pytest.raises(ServiceError):
        client.status("0" * 32)

    train, model = parse_config(TINY)
    secret = job_circuit_seed(11, preprocess(DOCS), train, model)
    lm, _, _ = run_training(DOCS, train, model, server_seed=11)
    secrets = {str(secret)}
    secrets |= {str(lm.backbone.vqcs[t].spec.seed) for t in GATE_TAGS}
    angle_reprs = {repr(float(a)) for t in GATE_TAGS for a in lm.backbone.vqcs[t].angles.detach().numpy().ravel()}
    seed_bytes = [np.uint64(s).tobytes() for s in map(int, secrets)]

    json_bodies = [raw for ctype, raw in client.bodies if ctype.startswith("application/json")]
    binary = [raw for ctype, raw in client.bodies if ctype == "application/octet-stream"]
    assert json_bodies and len(binary) == 1
    for raw in json_bodies:
        doc = json.loads(raw)
        assert not FORBIDDEN & set(_walk_keys(doc))
        text = raw.decode()
        assert not any(s in text for s in secrets)
        assert not any(a in text for a in angle_reprs)
        if "job_id" in doc:
            assert set(doc) <= VIEW_KEYS | {"error"}
            assert set(doc["config"]) == set(CLIENT_KEYS) | {"secret_seed"}
            assert doc["config"]["secret_seed"] == "REDACTED"
        else:
            assert set(doc) == {"code", "message"}
    # the export holds the header, vocab, float32 matrix and CRC only
    blob = binary[0]
    matrix, vocab = decode_embeddings(blob)
    assert len(blob) == 20 + sum(2 + len(t.encode()) for t in vocab.tokens) + matrix.size * 4 + 4
    assert not any(b in blob for b in seed_bytes)


def test_lifecycle_never_goes_backwards(server):
    client = QlmClient(server.url)
    jobs = [client.submit(DOCS, {**TINY, "seed": s}) for s in range(2)]
    order = {"queued": 0, "running": 1, "converged": 2, "failed": 2}
    history = {j: [] for j in jobs}
    errors = []

    def poll(j):
        try:
            while True:
                state = QlmClient(server.url).status(j)["state"]
                history[j].append(state)
                if state in ("converged", "failed"):
                    return
        except Exception as exc:  # surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=poll, args=(j,)) for j in jobs for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(120)
    assert not errors
    for states in history.values():
        ranks = [order[s] for s in states]
        assert ranks == sorted(ranks)
        assert states[-1] == "converged"


def test_restart_fails_interrupted_and_requeues(tmp_path):
    work = tmp_path / "work"
    store = service.JobStore(work)
    train, model = parse_config(TINY)
    cfg = public_config(train, model)
    interrupted = store.create(DOCS, cfg).job_id
    store.transition(interrupted, "running")
    waiting = store.create(DOCS, cfg).job_id
    del store  # the previous process is gone

    with QlmServer(work, server_seed=2) as srv:
        client = QlmClient(srv.url)
        view = client.status(interrupted)
        assert view["state"] == "failed" and "restart" in view["error"]
        assert client.wait(waiting, timeout=120)["state"] == "converged"
    # converged artifacts survive another restart
    with QlmServer(work, server_seed=2) as srv:
        client = QlmClient(srv.url)
        assert client.status(waiting)["state"] == "converged"
        decode_embeddings(client.fetch_embeddings(waiting))


def test_trainer_survives_failing_job(server, monkeypatch):
    calls = []

    def boom(*args, **kw):
        calls.append(1)
        raise RuntimeError("device fault")

    monkeypatch.setattr(service, "run_training", boom)
    client = QlmClient(server.url)
    job = client.submit(DOCS, TINY)
    view = client.wait(job, timeout=30)
    assert view["state"] == "failed" and "device fault" in view["error"]
    monkeypatch.undo()
    ok = client.submit(DOCS, TINY)
    assert client.wait(ok, timeout=120)["state"] == "converged"


def test_public_config_redacts():
    train, model = parse_config({"epochs": 3, "lr": 1})
    echo = public_config(train, model)
    assert echo["secret_seed"] == "REDACTED" and "circuit_seed" not in echo
    assert echo["epochs"] == 3 and echo["lr"] == 1.0
    assert parse_config(None)[0] == TrainConfig()
    assert parse_config({})[1] == ModelConfig()


def test_circuit_seed_depends_on_server_seed_and_inputs():
    train, model = parse_config(TINY)
    base = job_circuit_seed(1, DOCS, train, model)
    assert base == job_circuit_seed(1, DOCS, train, model)
    assert base != job_circuit_seed(2, DOCS, train, model)
    assert base != job_circuit_seed(1, DOCS[:-1], train, model)
    assert base != job_circuit_seed(1, DOCS, TrainConfig(epochs=3), model)
