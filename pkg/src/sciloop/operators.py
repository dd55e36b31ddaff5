"""Expansion operators: building operator-specific generation contexts.

Each builder reads the solution graph and returns a :class:`GenerationContext`.
Generators see only contexts, never the graph itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from sciloop.core import Evaluation, Judgment, Rng, Solution, SolutionKind, UsageError, judge
from sciloop.solution_graph import OperatorTag, SolutionGraph


class NotApplicable(Exception):
    """The operator's preconditions do not hold; the caller should fall back."""


class GenerationError(RuntimeError):
    """A proposal generator could not produce a solution."""


@dataclass(frozen=True)
class TrajectoryStep:
    solution: Solution
    score: float
    judgment: Judgment


@dataclass(frozen=True)
class Reference:
    solution: Solution
    score: float


@dataclass(frozen=True)
class GenerationContext:
    operator_tag: OperatorTag
    parent_id: str
    parent_solution: Solution
    parent_evaluation: Evaluation
    trajectory: tuple[TrajectoryStep, ...] = ()
    references: tuple[Reference, ...] = ()
    reference_ids: tuple[str, ...] = ()
    task_objective: str = ""
    memory_hints: tuple[str, ...] = ()

    def __post_init__(self):
        tag = self.operator_tag
        if tag is OperatorTag.PRIMARY and (self.trajectory or self.references):
            raise UsageError("primary contexts carry no trajectory or references")
        if tag is OperatorTag.INTRA_BRANCH and self.references:
            raise UsageError("intra-branch contexts carry no references")
        if tag in (OperatorTag.CROSS_BRANCH, OperatorTag.AGGREGATION):
            if not self.references or self.trajectory:
                raise UsageError(f"{tag.value} contexts need references and no trajectory")

    def with_hints(self, hints: list[str]) -> GenerationContext:
        return replace(self, memory_hints=tuple(hints))

    def to_envelope(self) -> dict:
        """Versioned JSON-ready description used by remote generators."""
        return {
            "version": 1,
            "operator": self.operator_tag.value,
            "objective": self.task_objective,
            "parent": {"solution": self.parent_solution.payload,
                       "kind": self.parent_solution.kind.value,
                       "score": self.parent_evaluation.score},
            "trajectory": [{"solution": t.solution.payload, "score": t.score,
                            "judgment": t.judgment.value} for t in self.trajectory],
            "references": [{"solution": r.solution.payload, "score": r.score}
                           for r in self.references],
            "hints": list(self.memory_hints),
        }


class ProposalGenerator(Protocol):
    def generate(self, context: GenerationContext, rng: Rng) -> Solution: ...


def _evaluated(graph: SolutionGraph, node_id: str):
    node = graph.node(node_id)
    if not node.evaluated:
        raise UsageError(f"node {node_id!r} has not been evaluated")
    return node


def build_primary_context(graph: SolutionGraph, parent: str, objective: str = "") -> GenerationContext:
    node = _evaluated(graph, parent)
    return GenerationContext(OperatorTag.PRIMARY, node.id, node.solution, node.score,
                             task_objective=objective)


def build_intra_branch_context(graph: SolutionGraph, parent: str, max_depth: int,
                               objective: str = "") -> GenerationContext:
    """Parent plus up to ``max_depth`` same-branch ancestors, nearest first.

    Each trajectory step is judged against its own primary parent's score.
    """
    node = _evaluated(graph, parent)
    steps = []
    for nid in graph.ancestors(parent):
        if len(steps) >= max_depth:
            break
        n = graph.nodes[nid]
        if n.branch is None or n.branch != node.branch:
            break
        if not n.evaluated:
            continue
        up = graph.nodes[n.parent].score if n.parent is not None else None
        steps.append(TrajectoryStep(n.solution, n.score.score,
                                    judge(n.score.score, up.score if up else None)))
    return GenerationContext(OperatorTag.INTRA_BRANCH, node.id, node.solution, node.score,
                             trajectory=tuple(steps), task_objective=objective)


def build_cross_branch_context(graph: SolutionGraph, parent: str, k: int,
                               objective: str = "") -> GenerationContext:
    node = _evaluated(graph, parent)
    refs = [r for r in graph.top_nodes(len(graph.nodes), include_root=False)
            if graph.nodes[r].branch != node.branch][:k]
    if not refs:
        raise NotApplicable("no evaluated node outside the parent's branch")
    return GenerationContext(
        OperatorTag.CROSS_BRANCH, node.id, node.solution, node.score,
        references=tuple(Reference(graph.nodes[r].solution, graph.nodes[r].score.score) for r in refs),
        reference_ids=tuple(refs), task_objective=objective)


def select_aggregation_refs(graph: SolutionGraph, k: int) -> list[str]:
    """Top-``k`` non-root nodes with at most ``ceil(k/2)`` drawn from any one branch."""
    cap = math.ceil(k / 2)
    taken: dict[str, int] = {}
    refs = []
    for nid in graph.top_nodes(len(graph.nodes), include_root=False):
        branch = graph.nodes[nid].branch
        if taken.get(branch, 0) >= cap:
            continue
        taken[branch] = taken.get(branch, 0) + 1
        refs.append(nid)
        if len(refs) == k:
            break
    return refs


def build_aggregation_context(graph: SolutionGraph, k: int, objective: str = "") -> GenerationContext:
    """References drawn across branches; the best reference becomes the parent."""
    if len(graph.branches_with_evaluations()) < 2:
        raise NotApplicable("aggregation needs evaluated nodes in at least two branches")
    refs = select_aggregation_refs(graph, k)
    best = graph.nodes[refs[0]]
    return GenerationContext(
        OperatorTag.AGGREGATION, best.id, best.solution, best.score,
        references=tuple(Reference(graph.nodes[r].solution, graph.nodes[r].score.score) for r in refs),
        reference_ids=tuple(refs), task_objective=objective)


def build_context(graph: SolutionGraph, tag: OperatorTag, parent: str, *, topk_refs: int,
                  trajectory_depth: int, objective: str = "") -> GenerationContext:
    if tag is OperatorTag.PRIMARY:
        return build_primary_context(graph, parent, objective)
    if tag is OperatorTag.INTRA_BRANCH:
        return build_intra_branch_context(graph, parent, trajectory_depth, objective)
    if tag is OperatorTag.CROSS_BRANCH:
        return build_cross_branch_context(graph, parent, topk_refs, objective)
    if tag is OperatorTag.AGGREGATION:
        return build_aggregation_context(graph, topk_refs, objective)
    raise UsageError(f"no context builder for {tag}")


def _flip(bits: str, i: int) -> str:
    return bits[:i] + ("1" if bits[i] == "0" else "0") + bits[i + 1:]


class BitstringMutator:
    """Deterministic stand-in for a model-backed generator, for bitstring solutions.

    * primary: flip one bit at a random index.
    * intra_branch: like primary, but positions changed by regressed steps of
      the trajectory are down-weighted by ``regress_weight``.
    * cross_branch: copy one aligned quarter of a random reference into the parent.
    * aggregation: uniform per-position crossover among the references.
    """

    def __init__(self, regress_weight: float = 0.25):
        self.regress_weight = regress_weight

    def generate(self, context: GenerationContext, rng: Rng) -> Solution:
        parent = context.parent_solution.payload
        pool = [parent] + [r.solution.payload for r in context.references]
        pool += [t.solution.payload for t in context.trajectory]
        if len({len(p) for p in pool}) != 1:
            raise UsageError("bitstring contexts must hold solutions of equal length")
        if context.parent_solution.kind is not SolutionKind.BITSTRING:
            raise UsageError("BitstringMutator only handles bitstring solutions")
        tag = context.operator_tag
        n = len(parent)
        if tag is OperatorTag.PRIMARY:
            out = _flip(parent, rng.integers(0, n))
        elif tag is OperatorTag.INTRA_BRANCH:
            out = _flip(parent, self._biased_index(context, rng))
        elif tag is OperatorTag.CROSS_BRANCH:
            ref = context.references[rng.integers(0, len(context.references))].solution.payload
            q = rng.integers(0, 4) if n >= 4 else 0
            lo, hi = (q * n // 4, (q + 1) * n // 4) if n >= 4 else (0, n)
            out = parent[:lo] + ref[lo:hi] + parent[hi:]
        elif tag is OperatorTag.AGGREGATION:
            sources = [r.solution.payload for r in context.references]
            picks = rng.generator.integers(0, len(sources), size=n)
            out = "".join(sources[p][i] for i, p in enumerate(picks))
        else:
            raise UsageError(f"cannot generate for operator {tag}")
        return Solution(out, SolutionKind.BITSTRING)

    def _biased_index(self, context: GenerationContext, rng: Rng) -> int:
        n = len(context.parent_solution.payload)
        weights = np.ones(n)
        traj = context.trajectory
        for child, parent in zip(traj, traj[1:]):
            if child.judgment is Judgment.REGRESSED:
                for i, (a, b) in enumerate(zip(child.solution.payload, parent.solution.payload)):
                    if a != b:
                        weights[i] = self.regress_weight
        cdf = np.cumsum(weights / weights.sum())
        return min(int(np.searchsorted(cdf, rng.random(), side="right")), n - 1)
