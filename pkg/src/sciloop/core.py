"""Shared vocabulary: tasks, solutions, evaluations, seeded randomness, configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np


class UsageError(ValueError):
    """Raised when an operation is called with arguments that violate its contract."""


class SolutionKind(str, Enum):
    BITSTRING = "bitstring"
    NUMERIC_VECTOR = "numeric-vector"
    TEXT = "text"
    EXTERNAL = "external"


class Judgment(str, Enum):
    IMPROVED = "improved"
    REGRESSED = "regressed"
    UNCHANGED = "unchanged"


def judge(score: float, reference: float | None) -> Judgment:
    """Strict comparison of ``score`` against the score it was derived from."""
    if reference is None or score == reference:
        return Judgment.UNCHANGED
    return Judgment.IMPROVED if score > reference else Judgment.REGRESSED


@dataclass(frozen=True)
class Task:
    id: str
    objective_text: str
    budget: int
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.budget, int) or self.budget < 0:
            raise UsageError(f"budget must be a non-negative integer, got {self.budget!r}")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Solution:
    payload: str
    kind: SolutionKind = SolutionKind.BITSTRING

    def __post_init__(self):
        if not self.payload:
            raise UsageError("solution payload must be non-empty")
        object.__setattr__(self, "kind", SolutionKind(self.kind))
        if self.kind is SolutionKind.BITSTRING and set(self.payload) - {"0", "1"}:
            raise UsageError(f"bitstring payload contains non-binary characters: {self.payload!r}")

    def to_dict(self) -> dict:
        return {"payload": self.payload, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, data: dict) -> Solution:
        return cls(data["payload"], SolutionKind(data["kind"]))


@dataclass(frozen=True)
class Evaluation:
    """Result of scoring a solution. Higher scores are better."""

    score: float
    detail: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0

    def __post_init__(self):
        score = float(self.score)
        if not math.isfinite(score):
            raise UsageError(f"evaluation score must be finite, got {self.score!r}")
        object.__setattr__(self, "score", score)

    def to_dict(self) -> dict:
        return {"score": self.score, "detail": dict(self.detail), "wall_time": self.wall_time}

    @classmethod
    def from_dict(cls, data: dict) -> Evaluation:
        return cls(data["score"], dict(data.get("detail", {})), data.get("wall_time", 0.0))


def _derive_key(seed: int, path: tuple[str, ...]) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(seed.to_bytes(8, "little"))
    for label in path:
        h.update(b"\x00")
        h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Counter-based (Philox) generator identified by a seed and a label path.

    Children made with :meth:`split` depend only on the parent's seed and path,
    never on how many draws the parent has made.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise UsageError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.path = tuple(path)
        self._bitgen = np.random.Philox(key=_derive_key(self.seed, self.path))
        self.generator = np.random.Generator(self._bitgen)

    def split(self, label: str) -> Rng:
        return split_rng(self, label)

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, low: int, high: int | None = None) -> int:
        return int(self.generator.integers(low, high))

    def bits64(self) -> int:
        return int(self.generator.integers(0, 2**64, dtype=np.uint64))

    def get_state(self) -> dict:
        state = self._bitgen.state
        return {
            "seed": self.seed,
            "path": list(self.path),
            "counter": [int(x) for x in state["state"]["counter"]],
            "key": [int(x) for x in state["state"]["key"]],
            "buffer": [int(x) for x in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    @classmethod
    def from_state(cls, data: dict) -> Rng:
        rng = cls(data["seed"], tuple(data["path"]))
        rng._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(data["counter"], dtype=np.uint64),
                "key": np.array(data["key"], dtype=np.uint64),
            },
            "buffer": np.array(data["buffer"], dtype=np.uint64),
            "buffer_pos": data["buffer_pos"],
            "has_uint32": data["has_uint32"],
            "uinteger": data["uinteger"],
        }
        return rng

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '-'})"


def split_rng(rng: Rng, label: str) -> Rng:
    if not label:
        raise UsageError("split label must be non-empty")
    return Rng(rng.seed, rng.path + (label,))


def make_id(rng: Rng) -> str:
    return f"{rng.bits64():016x}"


@dataclass
class CampaignConfig:
    """Everything needed to rebuild a search campaign.

    ``env`` and ``generator`` are plain dictionaries interpreted by
    :mod:`sciloop.harness.factory`; ``root_payload`` overrides the
    environment's baseline solution.
    """

    task: Task
    c_explore: float = 1.41421356
    stagnation_window: int = 3
    aggregation_period: int = 8
    topk_refs: int = 3
    trajectory_depth: int = 4
    alpha_hybrid: float = 0.5
    k_retrieve: int = 5
    hint_cap: int = 8
    encoder_dim: int = 256
    memory_enabled: bool = False
    worker_count: int = 1
    policy: str = "default"
    max_attempts: int | None = None
    env: dict[str, Any] = field(default_factory=dict)
    generator: dict[str, Any] = field(default_factory=lambda: {"type": "mutate"})
    root_payload: str | None = None

    def __post_init__(self):
        if isinstance(self.task, dict):
            self.task = Task(**self.task)
        if self.c_explore < 0 or not math.isfinite(self.c_explore):
            raise UsageError("c_explore must be a non-negative real")
        for name in ("stagnation_window", "aggregation_period", "topk_refs", "k_retrieve",
                     "hint_cap", "encoder_dim", "worker_count"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise UsageError(f"{name} must be a positive integer, got {value!r}")
        if self.trajectory_depth < 0:
            raise UsageError("trajectory_depth must be >= 0")
        if not 0.0 <= self.alpha_hybrid <= 1.0:
            raise UsageError("alpha_hybrid must lie in [0, 1]")
        if self.policy not in ("default", "primary"):
            raise UsageError(f"unknown policy {self.policy!r}")

    @property
    def attempt_limit(self) -> int:
        if self.max_attempts is not None:
            return self.max_attempts
        return 2 * self.task.budget

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> CampaignConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "task" not in data:
            raise UsageError("config is missing the 'task' section")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> CampaignConfig:
        return cls.from_dict(json.loads(text))
