"""Three-tier cognitive memory.

* procedural (``ProceduralMemory``): hashed signatures of past execution traces,
  used as strategic priors for planning and tool use;
* episodic (``EpisodicMemory``): one record per experiment, retrieved with a
  hybrid dense/sparse similarity and injected into generation contexts;
* semantic (``SemanticMemory``): insights distilled from pairwise comparisons
  of a batch of methods, plus an idea graph used for novelty scoring.
"""

from __future__ import annotations

import json
import os
from collections.abc import Sequence
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Protocol

import numpy as np

from sciloop.core import Judgment, UsageError, judge
from sciloop.similarity import (
    DenseVector,
    HashingEncoder,
    SparseVector,
    cosine,
    hashed_features,
    hybrid_sim,
    sparse_features,
    topk,
)

MANIFEST_VERSION = 1

TraceStep = tuple[str, str, str]


def f_proc(trace: Sequence[TraceStep], dim: int = 256) -> DenseVector:
    """Procedural signature of a trace of ``(step_kind, tool, outcome)`` triples.

    Steps become ``kind:tool:outcome`` tokens; hashed unigrams and bigrams
    make the signature sensitive to step order.
    """
    if not trace:
        raise UsageError("procedural trace must be non-empty")
    tokens = [":".join(str(part).lower() for part in step) for step in trace]
    return hashed_features(tokens, dim)


def _vec(values) -> DenseVector:
    arr = np.asarray(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProcSignature:
    trajectory_id: str
    features: DenseVector
    summary: str
    outcome: str
    trace: tuple[TraceStep, ...] = ()

    def to_dict(self) -> dict:
        return {"trajectory_id": self.trajectory_id, "features": self.features.tolist(),
                "summary": self.summary, "outcome": self.outcome,
                "trace": [list(s) for s in self.trace]}

    @classmethod
    def from_dict(cls, d: dict) -> ProcSignature:
        return cls(d["trajectory_id"], _vec(d["features"]), d["summary"], d["outcome"],
                   tuple(tuple(s) for s in d.get("trace", ())))


@dataclass(frozen=True)
class Episode:
    id: str
    method: str
    metrics: dict[str, float]
    judgment: Judgment
    dense: DenseVector
    sparse: SparseVector

    @property
    def summary(self) -> str:
        metrics = ", ".join(f"{k}={v:.4g}" for k, v in sorted(self.metrics.items()))
        return f"[{self.judgment.value}] {self.method} ({metrics})"

    def to_dict(self) -> dict:
        return {"id": self.id, "method": self.method, "metrics": self.metrics,
                "judgment": self.judgment.value, "dense": self.dense.tolist(),
                "sparse": self.sparse}

    @classmethod
    def from_dict(cls, d: dict) -> Episode:
        return cls(d["id"], d["method"], dict(d["metrics"]), Judgment(d["judgment"]),
                   _vec(d["dense"]), dict(d["sparse"]))


@dataclass(frozen=True)
class ExperienceEntry:
    id: str
    insight: str
    level: str
    method_a: str
    method_b: str
    winner: str
    embedding: DenseVector

    def __post_init__(self):
        if self.winner not in ("a", "b", "tie"):
            raise UsageError(f"winner must be a, b or tie, got {self.winner!r}")
        if self.level not in ("principle", "heuristic"):
            raise UsageError(f"level must be principle or heuristic, got {self.level!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "insight": self.insight, "level": self.level,
                "method_a": self.method_a, "method_b": self.method_b, "winner": self.winner,
                "embedding": self.embedding.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> ExperienceEntry:
        return cls(d["id"], d["insight"], d["level"], d["method_a"], d["method_b"], d["winner"],
                   _vec(d["embedding"]))


@dataclass
class IdeaGraphEntry:
    id: str
    objective: str
    embedding: DenseVector
    links: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "objective": self.objective, "embedding": self.embedding.tolist(),
                "links": [list(link) for link in self.links]}

    @classmethod
    def from_dict(cls, d: dict) -> IdeaGraphEntry:
        return cls(d["id"], d["objective"], _vec(d["embedding"]),
                   [(a, float(b)) for a, b in d["links"]])


class ProceduralMemory:
    def __init__(self, dim: int = 256):
        self.dim = dim
        self.signatures: list[ProcSignature] = []

    def __len__(self):
        return len(self.signatures)

    def add(self, trajectory_id: str, trace: Sequence[TraceStep], summary: str,
            outcome: str = "success") -> ProcSignature:
        if outcome not in ("success", "failure"):
            raise UsageError("outcome must be 'success' or 'failure'")
        sig = ProcSignature(trajectory_id, f_proc(trace, self.dim), summary, outcome,
                            tuple(tuple(s) for s in trace))
        self.signatures.append(sig)
        return sig

    def retrieve(self, query_trace: Sequence[TraceStep], k: int) -> list[tuple[ProcSignature, float]]:
        if not self.signatures:
            return []
        q = f_proc(query_trace, self.dim)
        return topk(q, self.signatures, k, lambda a, s: cosine(a, s.features))


class EpisodicMemory:
    def __init__(self, encoder: HashingEncoder):
        self.encoder = encoder
        self.episodes: list[Episode] = []

    def __len__(self):
        return len(self.episodes)

    def add(self, method: str, metrics: dict[str, float], *, judgment: Judgment | str | None = None,
            parent_score: float | None = None) -> Episode:
        """Store one experiment. Without an explicit judgment, ``metrics['score']``
        is compared against ``parent_score``."""
        if not all(np.isfinite(v) for v in metrics.values()):
            raise UsageError("episode metrics must be finite")
        if judgment is None:
            judgment = judge(metrics["score"], parent_score) if "score" in metrics else Judgment.UNCHANGED
        ep = Episode(f"ep{len(self.episodes)}", method, dict(metrics), Judgment(judgment),
                     self.encoder.encode(method), sparse_features(method))
        self.episodes.append(ep)
        return ep

    def retrieve(self, hypothesis: str, k: int, alpha: float = 0.5) -> list[tuple[Episode, float]]:
        if not self.episodes:
            return []
        q = (self.encoder.encode(hypothesis), sparse_features(hypothesis))
        return topk(q, self.episodes, k,
                    lambda qq, e: hybrid_sim(qq[0], qq[1], e.dense, e.sparse, alpha))


class Distiller(Protocol):
    def __call__(self, method_a: str, score_a: float, method_b: str,
                 score_b: float) -> list[tuple[str, str, str]]:
        """Return ``(insight, level, winner)`` triples for one pair of methods."""


def comparative_distiller(method_a: str, score_a: float, method_b: str,
                          score_b: float) -> list[tuple[str, str, str]]:
    """One heuristic per pair naming the better-scoring method."""
    if score_a == score_b:
        return [(f"'{method_a}' and '{method_b}' performed equally ({score_a:.4g})",
                 "heuristic", "tie")]
    winner, (hi, lo) = ("a", (score_a, score_b)) if score_a > score_b else ("b", (score_b, score_a))
    better, worse = (method_a, method_b) if winner == "a" else (method_b, method_a)
    return [(f"prefer '{better}' over '{worse}' ({hi:.4g} vs {lo:.4g})", "heuristic", winner)]


class SemanticMemory:
    def __init__(self, encoder: HashingEncoder, link_k: int = 3):
        self.encoder = encoder
        self.link_k = link_k
        self.library: list[ExperienceEntry] = []
        self.ideas: list[IdeaGraphEntry] = []

    def distill(self, batch: Sequence[tuple[str, float]],
                distiller: Distiller = comparative_distiller) -> list[ExperienceEntry]:
        if len(batch) < 2:
            raise UsageError("distillation needs at least two methods")
        added = []
        for (ma, sa), (mb, sb) in combinations(batch, 2):
            for insight, level, winner in distiller(ma, sa, mb, sb)[:2]:
                entry = ExperienceEntry(f"xp{len(self.library)}", insight, level, ma, mb, winner,
                                        self.encoder.encode(insight))
                self.library.append(entry)
                added.append(entry)
        return added

    def retrieve(self, goal: str, k: int) -> list[tuple[ExperienceEntry, float]]:
        if not self.library:
            return []
        q = self.encoder.encode(goal)
        return topk(q, self.library, k, lambda a, e: cosine(a, e.embedding))

    def add_idea(self, objective: str) -> IdeaGraphEntry:
        """Insert an explored objective, linked to its nearest existing ideas."""
        emb = self.encoder.encode(objective)
        links = []
        if self.ideas:
            links = [(x.id, s) for x, s in
                     topk(emb, self.ideas, self.link_k, lambda a, x: cosine(a, x.embedding))]
        entry = IdeaGraphEntry(f"idea{len(self.ideas)}", objective, emb, links)
        self.ideas.append(entry)
        return entry

    def novelty(self, candidate: str) -> float:
        """One minus the highest similarity to any explored idea; 1.0 when none exist."""
        if not self.ideas:
            return 1.0
        emb = self.encoder.encode(candidate)
        return 1.0 - max(cosine(emb, x.embedding) for x in self.ideas)


def context_trace(context) -> list[TraceStep]:
    """Procedural query trace describing a generation context."""
    op = context.operator_tag.value
    if context.trajectory:
        return [("expand", op, t.judgment.value) for t in reversed(context.trajectory)]
    return [("expand", op, "pending")]


class CognitiveMemory:
    """The three tiers behind one interface, plus snapshot I/O."""

    def __init__(self, dim: int = 256, *, k: int = 5, alpha: float = 0.5, hint_cap: int = 8):
        self.encoder = HashingEncoder(dim)
        self.dim = dim
        self.k = k
        self.alpha = alpha
        self.hint_cap = hint_cap
        self.spm = ProceduralMemory(dim)
        self.tem = EpisodicMemory(self.encoder)
        self.skm = SemanticMemory(self.encoder)
        self.pending_batch: list[tuple[str, float]] = []

    @classmethod
    def from_config(cls, config) -> CognitiveMemory:
        return cls(config.encoder_dim, k=config.k_retrieve, alpha=config.alpha_hybrid,
                   hint_cap=config.hint_cap)

    def hints_for_context(self, context, k: int | None = None, cap: int | None = None) -> list[str]:
        """Episodic, then semantic, then procedural hints, capped at ``cap``."""
        k = k or self.k
        cap = self.hint_cap if cap is None else cap
        hints = [e.summary for e, _ in self.tem.retrieve(context.parent_solution.payload, k, self.alpha)]
        hints += [x.insight for x, _ in self.skm.retrieve(context.task_objective or
                                                          context.parent_solution.payload, k)]
        hints += [s.summary for s, _ in self.spm.retrieve(context_trace(context), k)]
        return hints[:cap]

    def record_evaluation(self, node, parent_score: float, operator: str, batch_size: int) -> None:
        """Store a finished search step; distil once a batch of ``batch_size`` fills up."""
        method = f"{operator}: {node.solution.payload}"
        score = node.score.score
        self.tem.add(method, {"score": score}, parent_score=parent_score)
        self.pending_batch.append((method, score))
        if len(self.pending_batch) >= max(2, batch_size):
            self.skm.distill(self.pending_batch)
            self.pending_batch = []

    def stats(self) -> dict:
        return {"spm": len(self.spm), "tem": len(self.tem), "skm_library": len(self.skm.library),
                "skm_ideas": len(self.skm.ideas), "pending_batch": len(self.pending_batch),
                "encoder_dim": self.dim}

    TIER_FILES = {"spm": "spm.jsonl", "tem": "tem.jsonl", "skm_library": "skm_library.jsonl",
                  "skm_ideas": "skm_ideas.jsonl"}

    def _tier_records(self):
        return {"spm": self.spm.signatures, "tem": self.tem.episodes,
                "skm_library": self.skm.library, "skm_ideas": self.skm.ideas}

    def save(self, directory: str | os.PathLike) -> Path:
        """Write one JSONL file per tier and a manifest; returns the manifest path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for tier, records in self._tier_records().items():
            with open(directory / self.TIER_FILES[tier], "w", encoding="utf-8") as fh:
                for rec in records:
                    fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
        manifest = {"version": MANIFEST_VERSION, "encoder_dim": self.dim, "k": self.k,
                    "alpha": self.alpha, "hint_cap": self.hint_cap, "tiers": self.TIER_FILES,
                    "pending_batch": [list(p) for p in self.pending_batch]}
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, directory: str | os.PathLike) -> CognitiveMemory:
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest.get("version") != MANIFEST_VERSION:
            raise UsageError(f"unsupported memory manifest version {manifest.get('version')!r}")
        mem = cls(manifest["encoder_dim"], k=manifest["k"], alpha=manifest["alpha"],
                  hint_cap=manifest["hint_cap"])
        loaders = {"spm": ProcSignature.from_dict, "tem": Episode.from_dict,
                   "skm_library": ExperienceEntry.from_dict, "skm_ideas": IdeaGraphEntry.from_dict}
        for tier, records in mem._tier_records().items():
            with open(directory / manifest["tiers"][tier], encoding="utf-8") as fh:
                records.extend(loaders[tier](json.loads(line)) for line in fh if line.strip())
        mem.pending_batch = [(m, float(s)) for m, s in manifest["pending_batch"]]
        return mem
