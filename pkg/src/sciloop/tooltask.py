"""Toy tool-selection flows for measuring what procedural hints save.

Each world fixes a hidden mapping from subtask kind to the one tool that
solves it. An agent without hints tries tools in a seeded random order; with
hints it first tries the tools that succeeded for the same kind in similar
past trajectories retrieved from procedural memory.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from sciloop.core import Rng, UsageError
from sciloop.flowgraph import (
    PATHWAYS,
    FlowNode,
    NodeInputs,
    NodeType,
    TemplatePlanner,
    create_flow,
    run_flow,
)
from sciloop.memory import ProceduralMemory, TraceStep

TOOLS = ("web_search", "fetch_page", "read_pdf", "run_python", "query_kb", "calculator")

SUBTASKS = {
    "literature": "survey prior literature",
    "dataset": "locate the benchmark dataset",
    "compute": "compute the baseline metric",
    "figures": "extract reported figures",
    "protocol": "retrieve the lab protocol",
}


class ToolWorld:
    def __init__(self, seed: int):
        self.rng = Rng(seed).split("tool-world")
        perm = self.rng.split("assign").generator.permutation(len(TOOLS))
        self.correct = {kind: TOOLS[int(i)] for kind, i in zip(SUBTASKS, perm)}
        self._by_phrase = {phrase: kind for kind, phrase in SUBTASKS.items()}

    def kind_of(self, description: str) -> str:
        try:
            return self._by_phrase[description]
        except KeyError:
            raise UsageError(f"not a subtask of this world: {description!r}") from None

    def family(self, rng: Rng, size: int = 3) -> list[str]:
        idx = rng.generator.choice(len(SUBTASKS), size=size, replace=False)
        return [list(SUBTASKS)[int(i)] for i in idx]

    @staticmethod
    def objective(kinds: Sequence[str]) -> str:
        return " and ".join(SUBTASKS[k] for k in kinds)

    @staticmethod
    def expected_answer(kinds: Sequence[str]) -> str:
        return "solved: " + ", ".join(sorted(kinds))


class ToolAgent:
    """Executor that solves search nodes by calling tools; every call is counted."""

    def __init__(self, world: ToolWorld, rng: Rng, hints: dict[str, list[str]] | None = None,
                 max_calls: int | None = None):
        self.world = world
        self.rng = rng
        self.hints = hints or {}
        self.max_calls = max_calls or len(TOOLS)
        self.calls = 0
        self.trace: list[TraceStep] = []

    def _order(self, node: FlowNode, kind: str) -> list[str]:
        perm = self.rng.split(node.id).generator.permutation(len(TOOLS))
        hinted = [t for t in self.hints.get(kind, []) if t in TOOLS]
        rest = [TOOLS[int(i)] for i in perm if TOOLS[int(i)] not in hinted]
        return hinted + rest

    def execute(self, node: FlowNode, inputs: NodeInputs) -> str:
        if node.t is NodeType.SOLVE:
            self.calls += 1
            kinds = sorted(c.split(":", 1)[0] for c in inputs.mandatory.values())
            return "solved: " + ", ".join(kinds)
        kind = self.world.kind_of(node.d)
        for tool in self._order(node, kind)[:self.max_calls]:
            self.calls += 1
            ok = tool == self.world.correct[kind]
            self.trace.append((kind, tool, "success" if ok else "failure"))
            if ok:
                return f"{kind}: found with {tool}"
        raise RuntimeError(f"no tool solved {kind!r}")

    def respond(self, node: FlowNode, inputs: NodeInputs) -> dict[str, str | None]:
        self.calls += 1
        answer = next(iter(inputs.mandatory.values()), None)
        return {p: answer for p in PATHWAYS}


def plan_trace(kinds: Sequence[str]) -> list[TraceStep]:
    return [("plan", k, "node") for k in kinds]


def hints_from_memory(spm: ProceduralMemory, kinds: Sequence[str], k: int = 3) -> dict[str, list[str]]:
    """Tools that succeeded per kind in the ``k`` most similar stored trajectories, best first."""
    hints: dict[str, list[str]] = {}
    for sig, _ in spm.retrieve(plan_trace(kinds), k):
        for kind, tool, outcome in sig.trace:
            if outcome == "success" and kind in kinds and tool not in hints.setdefault(kind, []):
                hints[kind].append(tool)
    return hints


@dataclass(frozen=True)
class FlowOutcome:
    calls: int
    solved: bool
    answer: str | None


def solve_flow(world: ToolWorld, kinds: Sequence[str], rng: Rng,
               hints: dict[str, list[str]] | None = None,
               max_calls: int | None = None) -> tuple[FlowOutcome, ToolAgent]:
    agent = ToolAgent(world, rng, hints, max_calls)
    flow = create_flow(world.objective(kinds))
    try:
        answer = run_flow(flow, TemplatePlanner(), agent).answer
    except Exception:
        answer = None
    return FlowOutcome(agent.calls, answer == world.expected_answer(kinds), answer), agent


def remember(spm: ProceduralMemory, trajectory_id: str, kinds: Sequence[str], agent: ToolAgent) -> None:
    order = ", ".join(f"{k}->{t}" for k, t, o in agent.trace if o == "success")
    spm.add(trajectory_id, plan_trace(kinds) + agent.trace, f"tool order: {order}")


def hint_trial(seed: int, priors: int = 5, max_calls: int | None = None) -> tuple[FlowOutcome, FlowOutcome]:
    """One target flow solved without and with hints from ``priors`` earlier solved flows."""
    world = ToolWorld(seed)
    rng = Rng(seed).split("tool-trial")
    spm = ProceduralMemory()
    for i in range(priors):
        kinds = world.family(rng.split(f"prior/{i}"))
        outcome, agent = solve_flow(world, kinds, rng.split(f"prior-agent/{i}"), max_calls=max_calls)
        if outcome.solved:
            remember(spm, f"prior-{i}", kinds, agent)
    kinds = world.family(rng.split("target"))
    agent_rng = rng.split("target-agent")
    plain, _ = solve_flow(world, kinds, agent_rng, max_calls=max_calls)
    hinted, _ = solve_flow(world, kinds, agent_rng, hints_from_memory(spm, kinds), max_calls=max_calls)
    return plain, hinted
