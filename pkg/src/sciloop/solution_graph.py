"""Dynamic solution graph: a primary-parent tree carrying credit, plus reference edges.

Reference edges (cross-branch and aggregation) record where a proposal drew
its information from. They are never walked during backpropagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from sciloop.core import Evaluation, Solution, UsageError


class OperatorTag(str, Enum):
    ROOT = "root"
    PRIMARY = "primary"
    INTRA_BRANCH = "intra_branch"
    CROSS_BRANCH = "cross_branch"
    AGGREGATION = "aggregation"


class NodeStatus(str, Enum):
    UNEVALUATED = "unevaluated"
    IN_FLIGHT = "in_flight"
    EVALUATED = "evaluated"
    EVALUATION_FAILED = "evaluation_failed"


@dataclass
class SolutionNode:
    id: str
    index: int
    solution: Solution
    operator_tag: OperatorTag
    parent: str | None = None
    branch: str | None = None
    ref_edges: list[str] = field(default_factory=list)
    score: Evaluation | None = None
    visits: int = 0
    total_reward: float = 0.0
    status: NodeStatus = NodeStatus.UNEVALUATED
    children: list[str] = field(default_factory=list)
    depth: int = 0

    @property
    def mean_reward(self) -> float:
        return self.total_reward / self.visits if self.visits else 0.0

    @property
    def evaluated(self) -> bool:
        return self.status is NodeStatus.EVALUATED

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "index": self.index,
            "solution": self.solution.to_dict(),
            "operator_tag": self.operator_tag.value,
            "parent": self.parent,
            "branch": self.branch,
            "ref_edges": list(self.ref_edges),
            "score": self.score.to_dict() if self.score else None,
            "visits": self.visits,
            "total_reward": self.total_reward,
            "status": self.status.value,
            "children": list(self.children),
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SolutionNode:
        return cls(
            id=d["id"],
            index=d["index"],
            solution=Solution.from_dict(d["solution"]),
            operator_tag=OperatorTag(d["operator_tag"]),
            parent=d["parent"],
            branch=d["branch"],
            ref_edges=list(d["ref_edges"]),
            score=Evaluation.from_dict(d["score"]) if d["score"] else None,
            visits=d["visits"],
            total_reward=d["total_reward"],
            status=NodeStatus(d["status"]),
            children=list(d["children"]),
            depth=d["depth"],
        )


@dataclass
class Branch:
    """Lineage rooted at one child of the graph root."""

    id: str
    root_child: str
    best_score: float = -math.inf
    scores: list[float] = field(default_factory=list)

    def record(self, score: float) -> None:
        self.scores.append(score)
        if score > self.best_score:
            self.best_score = score

    def to_dict(self) -> dict:
        return {"id": self.id, "root_child": self.root_child,
                "best_score": self.best_score if math.isfinite(self.best_score) else None,
                "scores": list(self.scores)}

    @classmethod
    def from_dict(cls, d: dict) -> Branch:
        best = d["best_score"]
        return cls(d["id"], d["root_child"], -math.inf if best is None else best, list(d["scores"]))


class SolutionGraph:
    """Single-writer store of solution nodes, branches and edges."""

    def __init__(self):
        self.nodes: dict[str, SolutionNode] = {}
        self.branches: dict[str, Branch] = {}
        self.root: str | None = None
        self.notes: list[dict] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def node(self, node_id: str) -> SolutionNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UsageError(f"unknown node {node_id!r}") from None

    def add_root(self, solution: Solution, evaluation: Evaluation, node_id: str = "root") -> str:
        if self.root is not None:
            raise UsageError("graph already has a root")
        node = SolutionNode(id=node_id, index=0, solution=solution,
                            operator_tag=OperatorTag.ROOT, score=evaluation,
                            visits=1, total_reward=evaluation.score,
                            status=NodeStatus.EVALUATED)
        self.nodes[node_id] = node
        self.root = node_id
        return node_id

    def add_child(self, parent: str, proposal: Solution, tag: OperatorTag | str,
                  refs: list[str] | tuple[str, ...] = (), node_id: str | None = None) -> str:
        tag = OperatorTag(tag)
        p = self.node(parent)
        if tag is OperatorTag.ROOT:
            raise UsageError("add_child cannot create a root node")
        if tag in (OperatorTag.CROSS_BRANCH, OperatorTag.AGGREGATION) and not refs:
            raise UsageError(f"{tag.value} children need at least one reference")
        if refs and tag not in (OperatorTag.CROSS_BRANCH, OperatorTag.AGGREGATION):
            raise UsageError(f"{tag.value} children carry no reference edges")
        node_id = node_id or f"n{len(self.nodes)}"
        if node_id in self.nodes:
            raise UsageError(f"duplicate node id {node_id!r}")
        refs = list(dict.fromkeys(refs))
        for r in refs:
            if r == node_id:
                raise UsageError("a node cannot reference itself")
            self.node(r)
        if p.id == self.root:
            branch = f"b{len(self.branches)}"
            self.branches[branch] = Branch(branch, node_id)
        else:
            branch = p.branch
        node = SolutionNode(id=node_id, index=len(self.nodes), solution=proposal,
                            operator_tag=tag, parent=parent, branch=branch,
                            ref_edges=refs, depth=p.depth + 1)
        self.nodes[node_id] = node
        p.children.append(node_id)
        return node_id

    def ancestors(self, node_id: str) -> list[str]:
        path = [self.node(node_id).id]
        while (parent := self.nodes[path[-1]].parent) is not None:
            path.append(parent)
        return path

    def backpropagate(self, node_id: str, score: float | Evaluation) -> None:
        evaluation = score if isinstance(score, Evaluation) else None
        value = evaluation.score if evaluation else float(score)
        if not math.isfinite(value):
            raise UsageError(f"cannot backpropagate non-finite score {score!r}")
        node = self.node(node_id)
        if node.status is NodeStatus.EVALUATION_FAILED:
            raise UsageError("cannot backpropagate through a failed node")
        for nid in self.ancestors(node_id):
            n = self.nodes[nid]
            n.visits += 1
            n.total_reward += value
        if node.score is None:
            node.score = evaluation or Evaluation(value)
            node.status = NodeStatus.EVALUATED
            if node.branch is not None:
                self.branches[node.branch].record(value)

    def mark_failed(self, node_id: str, reason: str) -> None:
        node = self.node(node_id)
        node.status = NodeStatus.EVALUATION_FAILED
        self.notes.append({"node": node_id, "event": "evaluation_failed", "reason": reason})

    def evaluated_nodes(self) -> list[SolutionNode]:
        return [n for n in self.nodes.values() if n.evaluated]

    def top_nodes(self, k: int, *, exclude_branch: str | None = None,
                  include_root: bool = True) -> list[str]:
        if k < 1:
            raise UsageError("k must be >= 1")
        pool = [n for n in self.evaluated_nodes()
                if (include_root or n.id != self.root)
                and (exclude_branch is None or n.branch != exclude_branch)]
        pool.sort(key=lambda n: (-n.score.score, n.index))
        return [n.id for n in pool[:k]]

    def is_stagnant(self, branch: str | None, window: int) -> bool:
        if branch is None:
            return False
        if window < 1:
            raise UsageError("window must be positive")
        scores = self.branches[branch].scores
        if len(scores) < window:
            return False
        prior = max(scores[:-window], default=-math.inf)
        return not any(s > prior for s in scores[-window:])

    def branches_with_evaluations(self) -> list[str]:
        return [b.id for b in self.branches.values() if b.scores]

    def primary_children(self, node_id: str) -> list[SolutionNode]:
        return [self.nodes[c] for c in self.node(node_id).children]

    def edges(self) -> dict[str, list[list[str]]]:
        """Edge lists by type: ``primary`` is [parent, child], the others [child, ref]."""
        out: dict[str, list[list[str]]] = {"primary": [], "cross_branch": [], "aggregation": []}
        for n in self.nodes.values():
            if n.parent is not None:
                out["primary"].append([n.parent, n.id])
            if n.ref_edges:
                out[n.operator_tag.value].extend([n.id, r] for r in n.ref_edges)
        return out

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": [n.to_dict() for n in self.nodes.values()],
            "branches": [b.to_dict() for b in self.branches.values()],
            "edges": self.edges(),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> SolutionGraph:
        g = cls()
        g.root = data["root"]
        for nd in data["nodes"]:
            node = SolutionNode.from_dict(nd)
            g.nodes[node.id] = node
        for bd in data["branches"]:
            b = Branch.from_dict(bd)
            g.branches[b.id] = b
        g.notes = list(data.get("notes", []))
        return g

    def to_dot(self) -> str:
        lines = ["digraph solution_graph {", "  rankdir=TB;"]
        for n in self.nodes.values():
            score = f"{n.score.score:.4g}" if n.score else n.status.value
            lines.append(f'  "{n.id}" [label="{n.id}\\n{n.operator_tag.value}\\n{score}"];')
        for parent, child in self.edges()["primary"]:
            lines.append(f'  "{parent}" -> "{child}";')
        for kind in ("cross_branch", "aggregation"):
            for src, ref in self.edges()[kind]:
                lines.append(f'  "{ref}" -> "{src}" [style=dashed, label="{kind}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"
