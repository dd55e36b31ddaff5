import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from sciloop.core import CampaignConfig, Evaluation, Rng, Solution, SolutionKind, Task, UsageError
from sciloop.harness.checkpoint import (
    FORMAT_VERSION,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from sciloop.harness.cli import bundled_config, main
from sciloop.harness.factory import ConfigError, build_environment, build_generator, load_config
from sciloop.harness.remote import RemoteGenerator, RemoteModelSpec
from sciloop.memory import CognitiveMemory
from sciloop.operators import GenerationContext, GenerationError
from sciloop.search import init_state, run
from sciloop.solution_graph import NodeStatus, OperatorTag


def seg_config(budget=200, seed=5, memory=True):
    return CampaignConfig.from_dict({
        "task": {"id": "t", "objective_text": "assemble segments", "budget": budget, "seed": seed},
        "memory_enabled": memory,
        "env": {"type": "segment_composition", "length": 16, "segments": 4},
    })


def start(config):
    env = build_environment(config)
    memory = CognitiveMemory.from_config(config) if config.memory_enabled else None
    return init_state(config, env), env, build_generator(config), memory


def test_checkpoint_roundtrip(tmp_path):
    state, env, gen, mem = start(seg_config(60))
    run(state, generator=gen, env=env, memory=mem)
    manifest = save_checkpoint(state, tmp_path / "ck", memory=mem)
    assert manifest["format_version"] == FORMAT_VERSION and manifest["event_offset"] == 60
    ck = load_checkpoint(tmp_path / "ck")
    assert ck.state.graph.to_dict() == state.graph.to_dict()
    assert ck.state.rng.get_state() == state.rng.get_state()
    assert ck.memory.stats() == mem.stats()
    assert [e.to_json() for e in ck.state.events] == [e.to_json() for e in state.events]


def test_resume_matches_uninterrupted(tmp_path):
    full, env, gen, mem = start(seg_config(200))
    run(full, generator=gen, env=env, memory=mem)
    part, env, gen, mem = start(seg_config(200))
    run(part, generator=gen, env=env, memory=mem, max_steps=100)
    save_checkpoint(part, tmp_path / "ck", memory=mem)
    ck = load_checkpoint(tmp_path / "ck")
    run(ck.state, generator=gen, env=env, memory=ck.memory)
    tail = "".join(e.to_json() + "\n" for e in ck.state.events[100:])
    assert tail == "".join(e.to_json() + "\n" for e in full.events[100:])


def test_overwrite_is_atomic(tmp_path):
    state, env, gen, _ = start(seg_config(20, memory=False))
    save_checkpoint(state, tmp_path / "ck")
    run(state, generator=gen, env=env)
    save_checkpoint(state, tmp_path / "ck")
    assert load_checkpoint(tmp_path / "ck").event_offset == 20
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ck"]


@pytest.mark.parametrize("section,filename", [
    ("graph", "graph.json"), ("config", "config.json"), ("state", "state.json"),
    ("events", "events.jsonl"), ("manifest", "manifest.json"),
])
def test_corrupt_section_named(tmp_path, section, filename):
    state, *_ = start(seg_config(5, memory=False))
    save_checkpoint(state, tmp_path / "ck")
    (tmp_path / "ck" / filename).write_text("{not json")
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(tmp_path / "ck")
    assert err.value.section == section


def test_future_version_rejected(tmp_path):
    state, *_ = start(seg_config(5, memory=False))
    save_checkpoint(state, tmp_path / "ck")
    mpath = tmp_path / "ck" / "manifest.json"
    manifest = json.loads(mpath.read_text())
    manifest["format_version"] = FORMAT_VERSION + 1
    mpath.write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "ck")


def test_in_flight_refused(tmp_path):
    state, *_ = start(seg_config(5, memory=False))
    nid = state.graph.add_child("root", Solution("0" * 16, SolutionKind.BITSTRING), OperatorTag.PRIMARY)
    state.graph.nodes[nid].status = NodeStatus.IN_FLIGHT
    with pytest.raises(UsageError):
        save_checkpoint(state, tmp_path / "ck")


class Stub(BaseHTTPRequestHandler):
    script: list = []
    seen: list = []

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        Stub.seen.append((dict(self.headers), json.loads(body)))
        status, payload = Stub.script.pop(0) if Stub.script else (200, None)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if payload is not None:
            self.wfile.write(payload.encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    httpd = HTTPServer(("127.0.0.1", 0), Stub)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    Stub.script, Stub.seen = [], []
    yield f"http://127.0.0.1:{httpd.server_port}/v1/chat"
    httpd.shutdown()


def reply(text):
    return json.dumps({"choices": [{"message": {"role": "assistant", "content": text}}]})


def context():
    return GenerationContext(OperatorTag.PRIMARY, "root", Solution("draft", SolutionKind.TEXT),
                             Evaluation(0.2), task_objective="improve the draft")


SECRET = "sk-test-0123456789abcdef"


def remote(url, **kw):
    return RemoteGenerator(RemoteModelSpec(url, "stub-model", "SCILOOP_TEST_TOKEN", timeout=5, **kw),
                           sleep=lambda s: None)


def test_remote_pass_through(server, monkeypatch):
    monkeypatch.setenv("SCILOOP_TEST_TOKEN", SECRET)
    Stub.script = [(200, reply("better draft"))]
    out = remote(server).generate(context(), Rng(1))
    assert out == Solution("better draft", SolutionKind.TEXT)
    headers, body = Stub.seen[0]
    assert headers["Authorization"] == f"Bearer {SECRET}"
    envelope = json.loads(body["messages"][1]["content"])
    assert set(envelope) >= {"operator", "objective", "parent", "trajectory", "references", "hints"}


def test_remote_retries_transient(server, monkeypatch):
    monkeypatch.setenv("SCILOOP_TEST_TOKEN", SECRET)
    Stub.script = [(500, "{}"), (200, json.dumps({"content": [{"type": "text", "text": "ok"}]}))]
    assert remote(server, max_retries=2).generate(context(), Rng(1)).payload == "ok"
    assert len(Stub.seen) == 2


def test_remote_exhausted_and_malformed(server, monkeypatch):
    monkeypatch.setenv("SCILOOP_TEST_TOKEN", SECRET)
    Stub.script = [(503, "{}"), (503, "{}")]
    with pytest.raises(GenerationError, match="after 2 attempts"):
        remote(server, max_retries=1).generate(context(), Rng(1))
    Stub.script = [(200, "{\"choices\": []}")]
    with pytest.raises(GenerationError, match="malformed"):
        remote(server).generate(context(), Rng(1))


def test_remote_missing_token(monkeypatch):
    monkeypatch.delenv("SCILOOP_TEST_TOKEN", raising=False)
    with pytest.raises(ConfigError):
        remote("http://127.0.0.1:9/")
    with pytest.raises(UsageError):
        RemoteModelSpec("http://x", "m", "T", max_retries=-1)


def test_no_secret_in_artifacts(server, monkeypatch, tmp_path):
    monkeypatch.setenv("SCILOOP_TEST_TOKEN", SECRET)
    Stub.script = [(200, reply("v2")), (200, reply("v3")), (200, reply("v4"))]
    config = CampaignConfig.from_dict({
        "task": {"id": "t", "objective_text": "o", "budget": 3, "seed": 1},
        "env": {"type": "command", "command": ["python3", "-c",
                                               "import json; print(json.dumps({'score': 0.5}))"]},
        "generator": {"type": "remote", "endpoint": server, "model": "m",
                      "token_env": "SCILOOP_TEST_TOKEN", "max_retries": 0},
        "root_payload": "v1", "memory_enabled": True,
    })
    env, gen = build_environment(config), build_generator(config)
    state = init_state(config, env)
    mem = CognitiveMemory.from_config(config)
    run(state, generator=gen, env=env, memory=mem)
    save_checkpoint(state, tmp_path / "ck", memory=mem)
    for path in (tmp_path / "ck").rglob("*"):
        if path.is_file():
            assert SECRET not in path.read_text()


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text(json.dumps({"task": {"id": "t", "objective_text": "o", "budget": 1}, "junk": 1}))
    with pytest.raises(ConfigError):
        load_config(bad)
    cfg = CampaignConfig(task=Task("t", "o", 1), env={"type": "nope"})
    with pytest.raises(ConfigError):
        build_environment(cfg)


def test_cli_run_bundled(tmp_path, capsys):
    assert main(["run", "--config", str(bundled_config()), "--out", str(tmp_path / "ck")]) == 0
    out = capsys.readouterr().out
    assert "best score: 1" in out and "solution:" in out


def test_cli_inspect_fresh(tmp_path, capsys):
    assert main(["run", "--config", "bundled:bitstring", "--out", str(tmp_path / "ck"),
                 "--max-steps", "0"]) == 0
    capsys.readouterr()
    assert main(["inspect", "--checkpoint", str(tmp_path / "ck")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1].startswith("root") and len(lines) == 4


def test_cli_export_and_memory_stats(tmp_path, capsys):
    cfg = json.loads(bundled_config().read_text())
    cfg["memory_enabled"] = True
    cfg["task"]["budget"] = 30
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "ck"), "--checkpoint-every", "10"]) == 0
    assert main(["export", "--checkpoint", str(tmp_path / "ck"), "--format", "dot",
                 "--out", str(tmp_path / "g.dot")]) == 0
    dot = (tmp_path / "g.dot").read_text()
    assert dot.startswith("digraph") and dot.rstrip().endswith("}")
    edges = [l for l in dot.splitlines() if "->" in l]
    assert sum("dashed" not in l for l in edges) == 30
    capsys.readouterr()
    assert main(["memory-stats", "--checkpoint", str(tmp_path / "ck")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["memory_enabled"] and stats["tem"] == 30
    assert main(["export", "--checkpoint", str(tmp_path / "ck")]) == 0
    assert len(json.loads(capsys.readouterr().out)["nodes"]) == 31


def test_cli_resume(tmp_path, capsys):
    ck = str(tmp_path / "ck")
    assert main(["run", "--config", "bundled:bitstring", "--out", ck, "--max-steps", "50"]) == 0
    assert load_checkpoint(ck).state.evals_used == 50
    assert main(["resume", "--checkpoint", ck]) == 0
    assert load_checkpoint(ck).state.evals_used == 200


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["inspect", "--checkpoint", str(tmp_path / "nothing")]) == 2
    assert main(["bogus"]) == 2
    cfg = json.loads(bundled_config().read_text())
    cfg["env"] = {"type": "command", "command": ["false"]}
    cfg["root_payload"] = "x"
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
