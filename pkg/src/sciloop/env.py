"""Evaluation environments: synthetic bitstring objectives and an external-command scorer."""

from __future__ import annotations

import json
import os
import signal
import subprocess
import tempfile
import time
from collections.abc import Sequence
from typing import Protocol

from sciloop.core import Evaluation, Solution, SolutionKind, UsageError


class EvaluationError(RuntimeError):
    """The environment could not score a solution.

    ``reason`` is one of ``"exit"``, ``"timeout"`` or ``"parse"``.
    """

    def __init__(self, message: str, reason: str, **info):
        super().__init__(message)
        self.reason = reason
        self.info = info


class Environment(Protocol):
    kind: SolutionKind

    def evaluate(self, solution: Solution) -> Evaluation: ...


def _check_bits(bits: str, name: str = "target") -> str:
    if not bits or set(bits) - {"0", "1"}:
        raise UsageError(f"{name} must be a non-empty string of 0/1")
    return bits


class BitstringEnv:
    """Score = fraction of positions agreeing with a hidden target."""

    kind = SolutionKind.BITSTRING

    def __init__(self, target: str):
        self.target = _check_bits(target)
        self.length = len(target)

    def baseline(self) -> Solution:
        return Solution("0" * self.length)

    def _payload(self, solution: Solution) -> str:
        s = solution.payload
        if len(s) != self.length:
            raise UsageError(f"expected a bitstring of length {self.length}, got {len(s)}")
        return s

    def evaluate(self, solution: Solution) -> Evaluation:
        s = self._payload(solution)
        matches = sum(a == b for a, b in zip(s, self.target))
        return Evaluation(matches / self.length, {"matches": float(matches)})


class SegmentCompositionEnv(BitstringEnv):
    """All-or-nothing credit per segment: score = fully correct segments / segments.

    Partially correct segments earn nothing, which leaves every branch on
    plateaus and rewards combining segments found in different branches.
    """

    def __init__(self, target: str, segments: int):
        super().__init__(target)
        if segments < 2 or self.length % segments:
            raise UsageError("segments must be >= 2 and divide the target length")
        self.segments = segments
        self.seg_len = self.length // segments

    def segment_flags(self, bits: str) -> list[bool]:
        w = self.seg_len
        return [bits[i * w:(i + 1) * w] == self.target[i * w:(i + 1) * w]
                for i in range(self.segments)]

    def evaluate(self, solution: Solution) -> Evaluation:
        flags = self.segment_flags(self._payload(solution))
        detail = {f"segment_{i}": float(f) for i, f in enumerate(flags)}
        return Evaluation(sum(flags) / self.segments, detail)


def _lookup(obj, path: str):
    for part in path.split("."):
        if isinstance(obj, dict):
            obj = obj[part]
        elif isinstance(obj, list):
            obj = obj[int(part)]
        else:
            raise KeyError(part)
    return obj


class CommandEnv:
    """Runs an external program per solution and reads a score from its JSON output.

    The solution payload is written to ``solution<suffix>`` in a fresh working
    directory and ``{solution}`` in the command template is replaced by its
    path. The program must exit 0 and print one JSON object on stdout.
    """

    def __init__(self, command: Sequence[str], timeout: float = 60.0, score_field: str = "score",
                 kind: SolutionKind | str = SolutionKind.TEXT, negate: bool = False,
                 suffix: str = ".txt"):
        if timeout <= 0:
            raise UsageError("timeout must be positive")
        if not command:
            raise UsageError("command template is empty")
        self.command = list(command)
        self.timeout = timeout
        self.score_field = score_field
        self.kind = SolutionKind(kind)
        self.negate = negate
        self.suffix = suffix

    def evaluate(self, solution: Solution) -> Evaluation:
        with tempfile.TemporaryDirectory(prefix="sciloop-eval-") as workdir:
            path = os.path.join(workdir, "solution" + self.suffix)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(solution.payload)
            argv = [arg.replace("{solution}", path) for arg in self.command]
            start = time.monotonic()
            proc = subprocess.Popen(argv, cwd=workdir, stdout=subprocess.PIPE,
                                    stderr=subprocess.PIPE, text=True, start_new_session=True)
            try:
                out, err = proc.communicate(timeout=self.timeout)
            except subprocess.TimeoutExpired:
                _kill_group(proc)
                proc.communicate()
                raise EvaluationError(f"timed out after {self.timeout}s", "timeout",
                                      timeout=True) from None
            wall = time.monotonic() - start
        if proc.returncode != 0:
            raise EvaluationError(f"exit status {proc.returncode}: {err.strip()[-500:]}", "exit",
                                  returncode=proc.returncode)
        try:
            data = json.loads(out)
            score = float(_lookup(data, self.score_field))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EvaluationError(f"could not read {self.score_field!r} from output: {exc}",
                                  "parse", parse=True, raw=out[-2000:]) from None
        detail = {}
        if isinstance(data, dict):
            detail = {k: float(v) for k, v in data.items()
                      if isinstance(v, (int, float)) and not isinstance(v, bool)}
        try:
            return Evaluation(-score if self.negate else score, detail, wall)
        except UsageError as exc:
            raise EvaluationError(str(exc), "parse", parse=True) from None


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except ProcessLookupError:
        pass
