"""Graph-augmented Monte Carlo search: select, expand, simulate, backpropagate."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from typing import Protocol

from sciloop.core import CampaignConfig, Evaluation, Rng, Solution, UsageError, make_id
from sciloop.env import Environment, EvaluationError
from sciloop.operators import (
    GenerationContext,
    GenerationError,
    NotApplicable,
    ProposalGenerator,
    build_context,
)
from sciloop.solution_graph import NodeStatus, OperatorTag, SolutionGraph, SolutionNode

log = logging.getLogger(__name__)

INF = math.inf


def uct_scores(node: SolutionNode, kids: list[SolutionNode], c_explore: float) -> tuple[float, list[float]]:
    """UCT values for stopping at ``node`` and for each of ``kids``.

    Mean rewards are min-max normalised over the node and its visited
    children; a zero-visit child scores +inf. The node's own entry uses its
    subtree mean and its own visit count.
    """
    own_mean = node.total_reward / node.visits
    lo = hi = own_mean
    for k in kids:
        if k.visits:
            m = k.total_reward / k.visits
            if m < lo:
                lo = m
            elif m > hi:
                hi = m
    span = hi - lo
    log_n = math.log(node.visits)
    own = c_explore * math.sqrt(log_n / node.visits)
    if span > 0:
        own += (own_mean - lo) / span
    values = []
    for k in kids:
        if k.visits == 0:
            values.append(INF)
            continue
        v = c_explore * math.sqrt(log_n / k.visits)
        if span > 0:
            v += (k.total_reward / k.visits - lo) / span
        values.append(v)
    return own, values


_SELECTABLE = (NodeStatus.EVALUATED, NodeStatus.UNEVALUATED)


def selectable_children(graph: SolutionGraph, node_id: str) -> list[SolutionNode]:
    nodes = graph.nodes
    return [nodes[c] for c in nodes[node_id].children if nodes[c].status in _SELECTABLE]


def select(graph: SolutionGraph, c_explore: float) -> str:
    """Descend from the root by UCT until the current node beats all its children.

    Failed and in-flight children are skipped; an unvisited child is taken
    immediately (earliest first). Ties go to the current node, then to the
    earliest child.
    """
    if graph.root is None:
        raise UsageError("cannot select in an empty graph")
    node = graph.nodes[graph.root]
    while True:
        kids = selectable_children(graph, node.id)
        if not kids:
            return node.id
        for k in kids:
            if k.visits == 0:
                return k.id
        own, values = uct_scores(node, kids, c_explore)
        best = 0
        for i in range(1, len(values)):
            if values[i] > values[best]:
                best = i
        if own >= values[best]:
            return node.id
        node = kids[best]


class OperatorPolicy(Protocol):
    def choose(self, graph: SolutionGraph, node: str, step_index: int,
               config: CampaignConfig) -> OperatorTag: ...


def best_outside_score(graph: SolutionGraph, node: SolutionNode) -> float:
    """Highest score among evaluated nodes in other branches (root excluded)."""
    return max((n.score.score for n in graph.evaluated_nodes()
                if n.branch is not None and n.branch != node.branch), default=-INF)


class DefaultPolicy:
    """Aggregation on schedule, cross-branch on stagnation, intra-branch when deep.

    Cross-branch references are only worth taking when some other branch has
    found something better than the selected node.
    """

    def choose(self, graph, node, step_index, config):
        n = graph.node(node)
        if step_index % config.aggregation_period == 0 and len(graph.branches_with_evaluations()) >= 2:
            return OperatorTag.AGGREGATION
        if (graph.is_stagnant(n.branch, config.stagnation_window)
                and best_outside_score(graph, n) > n.score.score):
            return OperatorTag.CROSS_BRANCH
        if n.depth >= 2:
            return OperatorTag.INTRA_BRANCH
        return OperatorTag.PRIMARY


class PrimaryOnlyPolicy:
    def choose(self, graph, node, step_index, config):
        return OperatorTag.PRIMARY


def make_policy(name: str) -> OperatorPolicy:
    if name == "default":
        return DefaultPolicy()
    if name == "primary":
        return PrimaryOnlyPolicy()
    raise UsageError(f"unknown policy {name!r}")


@dataclass
class StepEvent:
    step: int
    selected: str | None
    operator: str | None
    child: str | None
    score: float | None
    best_score: float
    evals_used: int
    status: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> StepEvent:
        return cls(**json.loads(line))


@dataclass
class SearchState:
    config: CampaignConfig
    graph: SolutionGraph
    rng: Rng
    evals_used: int = 0
    attempts: int = 0
    step_index: int = 0
    best: tuple[str, float] = ("", -INF)
    events: list[StepEvent] = field(default_factory=list)

    @property
    def budget(self) -> int:
        return self.config.task.budget

    @property
    def finished(self) -> bool:
        return self.evals_used >= self.budget or self.attempts >= self.config.attempt_limit

    def step_rng(self, step: int) -> Rng:
        return self.rng.split(f"step/{step}")


def init_state(config: CampaignConfig, env: Environment, root: Solution | None = None) -> SearchState:
    """Evaluate the baseline solution and plant it as the graph root."""
    if root is None:
        if config.root_payload is not None:
            root = Solution(config.root_payload, env.kind)
        elif hasattr(env, "baseline"):
            root = env.baseline()
        else:
            raise UsageError("no root solution: set root_payload or use an env with a baseline")
    graph = SolutionGraph()
    evaluation = env.evaluate(root)
    graph.add_root(root, evaluation)
    rng = Rng(config.task.seed)
    return SearchState(config=config, graph=graph, rng=rng, best=(graph.root, evaluation.score))


@dataclass
class _Pending:
    step: int
    selected: str
    tag: OperatorTag
    child: str
    parent_score: float
    context: GenerationContext


def _prepare(state: SearchState, generator: ProposalGenerator, policy: OperatorPolicy,
             memory=None) -> _Pending | StepEvent:
    """Selection and expansion for the next step. Returns an event if generation failed."""
    cfg = state.config
    state.step_index += 1
    state.attempts += 1
    step = state.step_index
    graph = state.graph
    selected = select(graph, cfg.c_explore)
    tag = policy.choose(graph, selected, step, cfg)
    context = None
    for candidate in _fallbacks(tag, graph.node(selected).depth):
        try:
            context = build_context(graph, candidate, selected, topk_refs=cfg.topk_refs,
                                    trajectory_depth=cfg.trajectory_depth,
                                    objective=cfg.task.objective_text)
            tag = candidate
            break
        except NotApplicable:
            continue
    if memory is not None:
        context = context.with_hints(memory.hints_for_context(context))
    rng = state.step_rng(step)
    try:
        proposal = generator.generate(context, rng.split("generate"))
    except (GenerationError, UsageError, ValueError) as exc:
        graph.notes.append({"step": step, "event": "generation_failed", "selected": selected,
                            "operator": tag.value, "error": str(exc)})
        return StepEvent(step, selected, tag.value, None, None, state.best[1], state.evals_used,
                         "generation_failed")
    child = graph.add_child(context.parent_id, proposal, tag, refs=context.reference_ids
                            if tag in (OperatorTag.CROSS_BRANCH, OperatorTag.AGGREGATION) else (),
                            node_id=make_id(state.rng))
    return _Pending(step, selected, tag, child, context.parent_evaluation.score, context)


def _fallbacks(tag: OperatorTag, depth: int) -> list[OperatorTag]:
    tail = [OperatorTag.INTRA_BRANCH, OperatorTag.PRIMARY] if depth >= 2 else [OperatorTag.PRIMARY]
    return [tag] + [t for t in tail if t is not tag]


def _finish(state: SearchState, pending: _Pending, outcome: Evaluation | Exception,
            memory=None) -> StepEvent:
    graph = state.graph
    if isinstance(outcome, Exception):
        reason = getattr(outcome, "reason", type(outcome).__name__)
        graph.mark_failed(pending.child, f"{reason}: {outcome}")
        return StepEvent(pending.step, pending.selected, pending.tag.value, pending.child, None,
                         state.best[1], state.evals_used, "evaluation_failed")
    graph.backpropagate(pending.child, outcome)
    state.evals_used += 1
    if outcome.score > state.best[1]:
        state.best = (pending.child, outcome.score)
    if memory is not None:
        memory.record_evaluation(graph.nodes[pending.child], pending.parent_score,
                                 pending.tag.value, state.config.aggregation_period)
    return StepEvent(pending.step, pending.selected, pending.tag.value, pending.child,
                     outcome.score, state.best[1], state.evals_used, "ok")


def _simulate(env: Environment, solution: Solution) -> Evaluation | Exception:
    try:
        return env.evaluate(solution)
    except (EvaluationError, UsageError, OSError) as exc:
        return exc


def step(state: SearchState, generator: ProposalGenerator, env: Environment,
         policy: OperatorPolicy | None = None, memory=None) -> StepEvent:
    """Run one full select/expand/simulate/backpropagate iteration."""
    if state.evals_used >= state.budget:
        raise UsageError("evaluation budget exhausted")
    policy = policy or make_policy(state.config.policy)
    prepared = _prepare(state, generator, policy, memory)
    if isinstance(prepared, StepEvent):
        event = prepared
    else:
        outcome = _simulate(env, state.graph.nodes[prepared.child].solution)
        event = _finish(state, prepared, outcome, memory)
    state.events.append(event)
    return event


@dataclass
class SearchResult:
    solution: Solution
    score: float
    events: list[StepEvent]
    state: SearchState


def run(task_or_state, config: CampaignConfig | None = None, generator: ProposalGenerator | None = None,
        env: Environment | None = None, policy: OperatorPolicy | None = None, memory=None, *,
        max_steps: int | None = None,
        on_event: Callable[[StepEvent], None] | None = None) -> SearchResult:
    """Loop :func:`step` until the budget (or ``max_steps`` new steps) is used up.

    ``task_or_state`` is either a fresh :class:`~sciloop.core.Task` (the config's
    task is replaced by it) or an existing :class:`SearchState` to continue.
    With ``worker_count > 1`` evaluations run on a thread pool and results are
    applied in completion order; only ``worker_count == 1`` is reproducible.
    """
    if isinstance(task_or_state, SearchState):
        state = task_or_state
        config = state.config
    else:
        if config is None or env is None:
            raise UsageError("a new run needs a config and an environment")
        if task_or_state is not None and task_or_state != config.task:
            config = CampaignConfig.from_dict({**config.to_dict(), "task": task_or_state})
        state = init_state(config, env)
    if generator is None or env is None:
        raise UsageError("run needs a generator and an environment")
    policy = policy or make_policy(config.policy)
    limit = max_steps if max_steps is not None else INF

    def emit(event: StepEvent):
        if on_event is not None:
            on_event(event)

    taken = 0
    if config.worker_count == 1:
        while not state.finished and taken < limit:
            emit(step(state, generator, env, policy, memory))
            taken += 1
    else:
        taken = _run_parallel(state, generator, env, policy, memory, limit, emit)
    node_id, score = state.best
    return SearchResult(state.graph.nodes[node_id].solution, score, state.events, state)


def _run_parallel(state, generator, env, policy, memory, limit, emit) -> int:
    taken = 0
    in_flight: dict[Future, _Pending] = {}
    with ThreadPoolExecutor(max_workers=state.config.worker_count) as pool:
        while True:
            while (len(in_flight) < state.config.worker_count and taken < limit
                   and state.evals_used + len(in_flight) < state.budget
                   and state.attempts < state.config.attempt_limit):
                prepared = _prepare(state, generator, policy, memory)
                taken += 1
                if isinstance(prepared, StepEvent):
                    state.events.append(prepared)
                    emit(prepared)
                    continue
                node = state.graph.nodes[prepared.child]
                node.status = NodeStatus.IN_FLIGHT
                in_flight[pool.submit(_simulate, env, node.solution)] = prepared
            if not in_flight:
                return taken
            done, _ = wait(in_flight, return_when=FIRST_COMPLETED)
            for fut in sorted(done, key=lambda f: in_flight[f].step):
                prepared = in_flight.pop(fut)
                state.graph.nodes[prepared.child].status = NodeStatus.UNEVALUATED
                event = _finish(state, prepared, fut.result(), memory)
                state.events.append(event)
                emit(event)
