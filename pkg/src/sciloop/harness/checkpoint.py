"""Step-boundary checkpoints: a directory of JSON/JSONL sections plus a manifest.

Layout::

    manifest.json   format version, section file names, event offset
    config.json     CampaignConfig
    state.json      counters, best node and the campaign rng state
    graph.json      solution graph snapshot
    events.jsonl    step events so far
    memory/         cognitive memory tiers (when enabled)
    flow.json       flow graph (when one is attached)

Writes go to a sibling temp directory that is renamed into place.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

from sciloop.core import CampaignConfig, Rng, UsageError
from sciloop.flowgraph import FlowGraph
from sciloop.memory import CognitiveMemory
from sciloop.search import SearchState, StepEvent
from sciloop.solution_graph import NodeStatus, SolutionGraph

FORMAT_VERSION = 1

SECTIONS = {
    "config": "config.json",
    "state": "state.json",
    "graph": "graph.json",
    "events": "events.jsonl",
}


class CheckpointError(RuntimeError):
    def __init__(self, section: str, message: str):
        self.section = section
        super().__init__(f"checkpoint section '{section}': {message}")


@dataclass
class Checkpoint:
    path: Path
    manifest: dict
    state: SearchState
    memory: CognitiveMemory | None = None
    flow: FlowGraph | None = None

    @property
    def format_version(self) -> int:
        return self.manifest["format_version"]

    @property
    def event_offset(self) -> int:
        return self.manifest["event_offset"]


def _state_dict(state: SearchState) -> dict:
    return {"evals_used": state.evals_used, "attempts": state.attempts,
            "step_index": state.step_index, "best": list(state.best),
            "rng": state.rng.get_state()}


def save_checkpoint(state: SearchState, path: str | Path, *, memory: CognitiveMemory | None = None,
                    flow: FlowGraph | None = None) -> dict:
    """Write a self-contained checkpoint of ``state`` to ``path``; returns the manifest."""
    in_flight = [n.id for n in state.graph.nodes.values() if n.status is NodeStatus.IN_FLIGHT]
    if in_flight:
        raise UsageError(f"cannot checkpoint with evaluations in flight: {in_flight}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sections = dict(SECTIONS)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        (tmp / sections["config"]).write_text(state.config.to_json())
        (tmp / sections["state"]).write_text(json.dumps(_state_dict(state), indent=1))
        (tmp / sections["graph"]).write_text(json.dumps(state.graph.to_dict()))
        with open(tmp / sections["events"], "w", encoding="utf-8") as fh:
            fh.writelines(e.to_json() + "\n" for e in state.events)
        if memory is not None:
            memory.save(tmp / "memory")
            sections["memory"] = "memory"
        if flow is not None:
            (tmp / "flow.json").write_text(flow.to_json())
            sections["flow"] = "flow.json"
        manifest = {"format_version": FORMAT_VERSION, "sections": sections,
                    "event_offset": len(state.events), "step_index": state.step_index,
                    "evals_used": state.evals_used}
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1))
        old = None
        if path.exists():
            old = path.with_name(f".{path.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
        os.replace(tmp, path)
        if old is not None:
            shutil.rmtree(old)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


def _read(path: Path, section: str, parse):
    try:
        return parse(path)
    except CheckpointError:
        raise
    except FileNotFoundError as exc:
        raise CheckpointError(section, f"missing file {exc.filename}") from exc
    except (ValueError, KeyError, TypeError, UsageError) as exc:
        raise CheckpointError(section, f"{type(exc).__name__}: {exc}") from exc


def _json(p: Path):
    return json.loads(p.read_text())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    manifest = _read(path / "manifest.json", "manifest", _json)
    version = manifest.get("format_version") if isinstance(manifest, dict) else None
    if version != FORMAT_VERSION:
        raise CheckpointError("manifest", f"unsupported format version {version!r} "
                                          f"(this build reads {FORMAT_VERSION})")
    sections = manifest["sections"]
    config = _read(path / sections["config"], "config",
                   lambda p: CampaignConfig.from_json(p.read_text()))
    graph = _read(path / sections["graph"], "graph", lambda p: SolutionGraph.from_dict(_json(p)))
    raw = _read(path / sections["state"], "state", _json)

    def events(p: Path):
        return [StepEvent.from_json(line) for line in p.read_text().splitlines() if line.strip()]

    log = _read(path / sections["events"], "events", events)
    if len(log) != manifest["event_offset"]:
        raise CheckpointError("events", f"expected {manifest['event_offset']} events, found {len(log)}")

    def build_state(_):
        best_id, best_score = raw["best"]
        if best_id not in graph.nodes:
            raise KeyError(f"best node {best_id!r} not in graph")
        return SearchState(config=config, graph=graph, rng=Rng.from_state(raw["rng"]),
                           evals_used=raw["evals_used"], attempts=raw["attempts"],
                           step_index=raw["step_index"], best=(best_id, float(best_score)),
                           events=log)

    state = _read(path, "state", build_state)
    memory = None
    if "memory" in sections:
        memory = _read(path / sections["memory"], "memory", CognitiveMemory.load)
    flow = None
    if "flow" in sections:
        flow = _read(path / sections["flow"], "flow", lambda p: FlowGraph.from_dict(_json(p)))
    return Checkpoint(path, manifest, state, memory, flow)
