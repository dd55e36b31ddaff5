"""Knowledge-flow DAG of research subtasks and its execution.

A flow starts from a single ``answer`` node holding the objective. Planners
attach ``search`` and ``solve`` nodes upstream of it; the scheduler runs
nodes whose mandatory (``requires_result_from``) predecessors are done and
propagates each finished node's context to its successors. The answer node
is only ever executed by :func:`synthesize`, which merges three answer
pathways into one final answer.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

from sciloop.core import UsageError

log = logging.getLogger(__name__)

PATHWAYS = ("direct", "search_augmented", "self_driven")
FALLBACK_ORDER = ("search_augmented", "self_driven", "direct")


class NodeType(str, Enum):
    SEARCH = "search"
    SOLVE = "solve"
    ANSWER = "answer"


class NodeState(str, Enum):
    PENDING = "pending"
    READY = "ready"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class Relation(str, Enum):
    REQUIRES_RESULT_FROM = "requires_result_from"
    PROVIDES_EVIDENCE_FOR = "provides_evidence_for"
    CONSTRAINS_REASONING_OF = "constrains_reasoning_of"


_LEGAL = {
    NodeState.PENDING: {NodeState.READY, NodeState.FAILED},
    NodeState.READY: {NodeState.RUNNING},
    NodeState.RUNNING: {NodeState.DONE, NodeState.FAILED},
    NodeState.DONE: set(),
    NodeState.FAILED: set(),
}


class CycleError(UsageError):
    """An edge would close a cycle; ``path`` runs from the new edge's source back to itself."""

    def __init__(self, path: Sequence[str]):
        self.path = list(path)
        super().__init__("edge would create a cycle: " + " -> ".join(self.path))


class SynthesisBlocked(RuntimeError):
    def __init__(self, failed: Sequence[str], pending: Sequence[str] = ()):
        self.failed = list(failed)
        self.pending = list(pending)
        parts = []
        if self.failed:
            parts.append("failed: " + ", ".join(self.failed))
        if self.pending:
            parts.append("not done: " + ", ".join(self.pending))
        super().__init__("synthesis blocked; " + "; ".join(parts))


@dataclass
class FlowNode:
    id: str
    t: NodeType
    d: str
    s: NodeState = NodeState.PENDING
    c: str = ""

    def __post_init__(self):
        self.t = NodeType(self.t)
        self.s = NodeState(self.s)
        if not self.d:
            raise UsageError("flow node needs a task description")
        if bool(self.c) != (self.s is NodeState.DONE):
            raise UsageError("a node has context exactly when it is done")

    def to_dict(self) -> dict:
        return {"id": self.id, "t": self.t.value, "d": self.d, "s": self.s.value, "c": self.c}

    @classmethod
    def from_dict(cls, d: dict) -> FlowNode:
        return cls(d["id"], NodeType(d["t"]), d["d"], NodeState(d["s"]), d.get("c", ""))


@dataclass(frozen=True)
class FlowEdge:
    src: str
    dst: str
    r: Relation

    def __post_init__(self):
        object.__setattr__(self, "r", Relation(self.r))

    @property
    def mandatory(self) -> bool:
        return self.r is Relation.REQUIRES_RESULT_FROM

    def to_dict(self) -> dict:
        return {"from": self.src, "to": self.dst, "r": self.r.value}

    @classmethod
    def from_dict(cls, d: dict) -> FlowEdge:
        return cls(d["from"], d["to"], Relation(d["r"]))


@dataclass(frozen=True)
class NodeInputs:
    """Contexts delivered to an executing node, keyed by predecessor id."""

    mandatory: dict[str, str] = field(default_factory=dict)
    advisory: dict[str, tuple[str, str]] = field(default_factory=dict)

    def texts(self) -> list[str]:
        return list(self.mandatory.values()) + [c for _, c in self.advisory.values()]


@dataclass(frozen=True)
class AggregateResult:
    answer: str
    rule: str
    pathway: str
    votes: dict[str, int]

    def to_dict(self) -> dict:
        return {"answer": self.answer, "rule": self.rule, "pathway": self.pathway,
                "votes": dict(self.votes)}

    @classmethod
    def from_dict(cls, d: dict) -> AggregateResult:
        return cls(d["answer"], d["rule"], d["pathway"], dict(d["votes"]))


class FlowGraph:
    def __init__(self, objective: str):
        if not objective or not objective.strip():
            raise UsageError("objective must be non-empty")
        self.objective = objective
        self.root = "root"
        self.nodes: dict[str, FlowNode] = {self.root: FlowNode(self.root, NodeType.ANSWER, objective)}
        self.edges: list[FlowEdge] = []
        self.trace: list[dict] = []
        self.log: list[dict] = []
        self.result: AggregateResult | None = None
        self._edge_set: set[FlowEdge] = set()

    def node(self, node_id: str) -> FlowNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UsageError(f"unknown flow node {node_id!r}") from None

    def new_id(self) -> str:
        i = len(self.nodes)
        while f"n{i}" in self.nodes:
            i += 1
        return f"n{i}"

    def add_node(self, t: NodeType | str, d: str, node_id: str | None = None) -> str:
        t = NodeType(t)
        if t is NodeType.ANSWER:
            raise UsageError("a flow has exactly one answer node")
        node_id = node_id or self.new_id()
        if node_id in self.nodes:
            raise UsageError(f"duplicate flow node {node_id!r}")
        self.nodes[node_id] = FlowNode(node_id, t, d)
        return node_id

    def incoming(self, node_id: str) -> list[FlowEdge]:
        return [e for e in self.edges if e.dst == node_id]

    def outgoing(self, node_id: str) -> list[FlowEdge]:
        return [e for e in self.edges if e.src == node_id]

    def mandatory_preds(self, node_id: str) -> list[str]:
        return [e.src for e in self.edges if e.dst == node_id and e.mandatory]

    def transition(self, node_id: str, state: NodeState, context: str = "") -> None:
        node = self.node(node_id)
        if state not in _LEGAL[node.s]:
            raise UsageError(f"illegal transition {node.s.value} -> {state.value} for {node_id!r}")
        old = node.s
        node.s = state
        node.c = context if state is NodeState.DONE else ""
        self.trace.append({"node": node_id, "transition": f"{old.value}->{state.value}",
                           "timestamp_ordinal": len(self.trace)})

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "root": self.root,
            "nodes": [n.to_dict() for n in self.nodes.values()],
            "edges": [e.to_dict() for e in self.edges],
            "result": self.result.to_dict() if self.result else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> FlowGraph:
        flow = cls(data["objective"])
        flow.root = data["root"]
        flow.nodes = {}
        for nd in data["nodes"]:
            node = FlowNode.from_dict(nd)
            flow.nodes[node.id] = node
        for ed in data["edges"]:
            edge = FlowEdge.from_dict(ed)
            flow.edges.append(edge)
            flow._edge_set.add(edge)
        if data.get("result"):
            flow.result = AggregateResult.from_dict(data["result"])
        return flow

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(t, separators=(",", ":")) + "\n" for t in self.trace)

    def to_dot(self) -> str:
        lines = ["digraph flow {", "  rankdir=LR;"]
        for n in self.nodes.values():
            label = n.d.replace('"', "'")
            lines.append(f'  "{n.id}" [label="{n.id} [{n.t.value}]\\n{label}\\n{n.s.value}"];')
        for e in self.edges:
            style = "solid" if e.mandatory else "dashed"
            lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.r.value}", style={style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def create_flow(objective: str) -> FlowGraph:
    return FlowGraph(objective)


def _find_path(edges: Sequence[FlowEdge], start: str, goal: str) -> list[str] | None:
    adj: dict[str, list[str]] = {}
    for e in edges:
        adj.setdefault(e.src, []).append(e.dst)
    stack = [(start, [start])]
    seen = {start}
    while stack:
        cur, path = stack.pop()
        if cur == goal:
            return path
        for nxt in adj.get(cur, ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append((nxt, path + [nxt]))
    return None


def _check_edge(flow: FlowGraph, edges: Sequence[FlowEdge], e: FlowEdge) -> bool:
    """Validate ``e`` against ``edges``; False means it is already present."""
    flow.node(e.src)
    flow.node(e.dst)
    if e.src == e.dst:
        raise CycleError([e.src, e.src])
    if e in flow._edge_set or e in edges:
        return False
    if e.mandatory and flow.nodes[e.dst].s is not NodeState.PENDING:
        raise UsageError(f"cannot add a mandatory dependency to {e.dst!r} once it left pending")
    back = _find_path(edges, e.dst, e.src)
    if back is not None:
        raise CycleError([e.src] + back)
    return True


def add_edge(flow: FlowGraph, src: str, dst: str, r: Relation | str) -> bool:
    """Add ``src -> dst``; returns False when the edge already exists."""
    edge = FlowEdge(src, dst, Relation(r))
    if not _check_edge(flow, flow.edges, edge):
        return False
    flow.edges.append(edge)
    flow._edge_set.add(edge)
    return True


def ready_nodes(flow: FlowGraph) -> list[str]:
    """Pending non-answer nodes whose mandatory predecessors are all done, in creation order."""
    out = []
    for n in flow.nodes.values():
        if n.s is not NodeState.PENDING or n.t is NodeType.ANSWER:
            continue
        if all(flow.nodes[p].s is NodeState.DONE for p in flow.mandatory_preds(n.id)):
            out.append(n.id)
    return out


Proposal = tuple[Sequence[FlowNode], Sequence[FlowEdge]]


class Planner(Protocol):
    def expand(self, flow: FlowGraph) -> list[Proposal]: ...


def _apply_batch(flow: FlowGraph, nodes: Sequence[FlowNode], edges: Sequence[FlowEdge]) -> int:
    added: list[FlowNode] = []
    try:
        for n in nodes:
            if n.t is NodeType.ANSWER:
                raise UsageError("planners cannot add answer nodes")
            if n.s is not NodeState.PENDING:
                raise UsageError("planned nodes must start pending")
            if n.id in flow.nodes:
                raise UsageError(f"duplicate flow node {n.id!r}")
            flow.nodes[n.id] = FlowNode(n.id, n.t, n.d)
            added.append(n)
        staged = list(flow.edges)
        for e in edges:
            if _check_edge(flow, staged, e):
                staged.append(e)
    except UsageError:
        for n in added:
            del flow.nodes[n.id]
        raise
    new_edges = staged[len(flow.edges):]
    flow.edges.extend(new_edges)
    flow._edge_set.update(new_edges)
    return len(added)


def plan_round(flow: FlowGraph, planner: Planner) -> int:
    """Apply each proposal batch all-or-nothing; returns the number of nodes added."""
    count = 0
    for nodes, edges in planner.expand(flow):
        try:
            count += _apply_batch(flow, nodes, edges)
        except UsageError as exc:
            log.warning("rejected plan batch: %s", exc)
            flow.log.append({"event": "plan_rejected", "reason": str(exc)})
    return count


_CONJUNCTIONS = re.compile(r"\s*(?:;|,|\band then\b|\band\b|\bthen\b)\s*", re.IGNORECASE)


class TemplatePlanner:
    """Splits the objective on conjunctions: one search node per clause, one solve node.

    Each search node feeds the solve node (mandatory) and the answer
    (evidence); the solve node feeds the answer (mandatory). After the
    first round it proposes nothing, signalling convergence.
    """

    def expand(self, flow: FlowGraph) -> list[Proposal]:
        if flow.incoming(flow.root):
            return []
        clauses = [c for c in _CONJUNCTIONS.split(flow.objective) if c.strip()]
        base = len(flow.nodes)
        searches = [FlowNode(f"n{base + i}", NodeType.SEARCH, c.strip()) for i, c in enumerate(clauses)]
        solve = FlowNode(f"n{base + len(searches)}", NodeType.SOLVE, f"solve: {flow.objective}")
        edges = [FlowEdge(s.id, solve.id, Relation.REQUIRES_RESULT_FROM) for s in searches]
        edges += [FlowEdge(s.id, flow.root, Relation.PROVIDES_EVIDENCE_FOR) for s in searches]
        edges.append(FlowEdge(solve.id, flow.root, Relation.REQUIRES_RESULT_FROM))
        return [(searches + [solve], edges)]


class Executor(Protocol):
    def execute(self, node: FlowNode, inputs: NodeInputs) -> str: ...

    def respond(self, node: FlowNode, inputs: NodeInputs) -> Mapping[str, str | None]: ...


class EchoExecutor:
    """Deterministic executor: joins the task with its inputs; every pathway agrees."""

    def __init__(self, fail: Sequence[str] = ()):
        self.fail = set(fail)
        self.calls = 0

    def execute(self, node: FlowNode, inputs: NodeInputs) -> str:
        self.calls += 1
        if node.id in self.fail:
            raise RuntimeError(f"injected failure at {node.id}")
        return " | ".join([node.d] + inputs.texts())

    def respond(self, node: FlowNode, inputs: NodeInputs) -> dict[str, str | None]:
        self.calls += 1
        text = " | ".join(inputs.mandatory.values()) or node.d
        return {p: text for p in PATHWAYS}


def gather_inputs(flow: FlowGraph, node_id: str) -> NodeInputs:
    mandatory, advisory = {}, {}
    for e in flow.incoming(node_id):
        pred = flow.nodes[e.src]
        if pred.s is not NodeState.DONE:
            continue
        if e.mandatory:
            mandatory[e.src] = pred.c
        else:
            advisory[e.src] = (e.r.value, pred.c)
    return NodeInputs(mandatory, advisory)


def _propagate_failure(flow: FlowGraph, node_id: str) -> list[str]:
    failed = []
    frontier = [node_id]
    while frontier:
        cur = frontier.pop(0)
        for e in flow.outgoing(cur):
            dep = flow.nodes[e.dst]
            if e.mandatory and dep.s is NodeState.PENDING and dep.t is not NodeType.ANSWER:
                flow.transition(dep.id, NodeState.FAILED)
                flow.log.append({"event": "dependency_failed", "node": dep.id, "cause": cur})
                failed.append(dep.id)
                frontier.append(dep.id)
    return failed


def _start(flow: FlowGraph, node_id: str) -> None:
    node = flow.node(node_id)
    if node.t is NodeType.ANSWER:
        raise UsageError("the answer node is executed by synthesize()")
    if node.s is NodeState.PENDING:
        if node_id not in ready_nodes(flow):
            raise UsageError(f"node {node_id!r} has unfinished mandatory dependencies")
        flow.transition(node_id, NodeState.READY)
    if flow.nodes[node_id].s is not NodeState.READY:
        raise UsageError(f"node {node_id!r} is {node.s.value}, not ready")
    flow.transition(node_id, NodeState.RUNNING)


def _complete(flow: FlowGraph, node_id: str, context: str | None, error: BaseException | None) -> NodeState:
    if error is None and context:
        flow.transition(node_id, NodeState.DONE, context)
    else:
        reason = repr(error) if error is not None else "executor returned empty context"
        flow.transition(node_id, NodeState.FAILED)
        flow.log.append({"event": "node_failed", "node": node_id, "reason": reason})
        _propagate_failure(flow, node_id)
    return flow.nodes[node_id].s


def execute_node(flow: FlowGraph, node_id: str, executor: Executor) -> NodeState:
    _start(flow, node_id)
    inputs = gather_inputs(flow, node_id)
    try:
        context, error = executor.execute(flow.nodes[node_id], inputs), None
    except Exception as exc:
        context, error = None, exc
    return _complete(flow, node_id, context, error)


def execute_round(flow: FlowGraph, executor: Executor, workers: int = 1) -> list[str]:
    """Run every currently ready node; completions are applied in creation order."""
    batch = ready_nodes(flow)
    if workers <= 1 or len(batch) <= 1:
        for nid in batch:
            execute_node(flow, nid, executor)
        return batch
    for nid in batch:
        _start(flow, nid)
    jobs = [(nid, flow.nodes[nid], gather_inputs(flow, nid)) for nid in batch]

    def work(job):
        _, node, inputs = job
        try:
            return executor.execute(node, inputs), None
        except Exception as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(work, jobs))
    for (nid, _, _), (context, error) in zip(jobs, outcomes):
        _complete(flow, nid, context, error)
    return batch


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def aggregate_answers(direct: str | None = None, search_augmented: str | None = None,
                      self_driven: str | None = None) -> AggregateResult:
    """Exact-match vote after whitespace/case normalisation, with a fixed fallback order."""
    given = {"direct": direct, "search_augmented": search_augmented, "self_driven": self_driven}
    present = {k: v for k, v in given.items() if v is not None and v.strip()}
    if not present:
        raise UsageError("at least one pathway answer is required")
    votes: dict[str, int] = {}
    for v in present.values():
        votes[_normalize(v)] = votes.get(_normalize(v), 0) + 1
    if len(present) == 1:
        (pathway, answer), = present.items()
        return AggregateResult(answer, "singleton", pathway, votes)
    top = max(votes.values())
    winners = [key for key, n in votes.items() if n == top]
    if top * 2 > len(present) and len(winners) == 1:
        pathway = next(p for p in FALLBACK_ORDER if p in present and _normalize(present[p]) == winners[0])
        return AggregateResult(present[pathway], "majority", pathway, votes)
    pathway = next(p for p in FALLBACK_ORDER if p in present)
    return AggregateResult(present[pathway], f"fallback:{pathway}", pathway, votes)


def synthesize(flow: FlowGraph, executor: Executor) -> AggregateResult:
    root = flow.nodes[flow.root]
    if root.s is NodeState.DONE and flow.result is not None:
        return flow.result
    preds = flow.mandatory_preds(flow.root)
    failed = [p for p in preds if flow.nodes[p].s is NodeState.FAILED]
    pending = [p for p in preds if flow.nodes[p].s not in (NodeState.DONE, NodeState.FAILED)]
    if failed or pending:
        raise SynthesisBlocked(_failed_ancestors(flow, flow.root) or failed, pending)
    if root.s is NodeState.PENDING:
        flow.transition(flow.root, NodeState.READY)
    flow.transition(flow.root, NodeState.RUNNING)
    inputs = gather_inputs(flow, flow.root)
    try:
        answers = dict(executor.respond(root, inputs))
        result = aggregate_answers(**{p: answers.get(p) for p in PATHWAYS})
    except Exception as exc:
        flow.transition(flow.root, NodeState.FAILED)
        flow.log.append({"event": "node_failed", "node": flow.root, "reason": repr(exc)})
        raise
    flow.result = result
    flow.transition(flow.root, NodeState.DONE, result.answer)
    return result


def _failed_ancestors(flow: FlowGraph, node_id: str) -> list[str]:
    out, seen, frontier = [], set(), [node_id]
    while frontier:
        cur = frontier.pop()
        for p in flow.mandatory_preds(cur):
            if p in seen:
                continue
            seen.add(p)
            if flow.nodes[p].s is NodeState.FAILED:
                out.append(p)
            frontier.append(p)
    return sorted(out, key=list(flow.nodes).index)


def run_flow(flow: FlowGraph, planner: Planner, executor: Executor, *,
             max_rounds: int = 16, workers: int = 1) -> AggregateResult:
    """Alternate planning and execution until planning converges, then synthesize."""
    if max_rounds < 1:
        raise UsageError("max_rounds must be >= 1")
    for _ in range(max_rounds):
        added = plan_round(flow, planner)
        ran = execute_round(flow, executor, workers)
        open_nodes = [n for n in flow.nodes.values()
                      if n.t is not NodeType.ANSWER and n.s not in (NodeState.DONE, NodeState.FAILED)]
        if added == 0 and not ran and not open_nodes:
            break
    return synthesize(flow, executor)
