"""Turn the ``env`` and ``generator`` sections of a campaign config into objects."""

from __future__ import annotations

import json
from pathlib import Path

from sciloop.core import CampaignConfig, Rng, SolutionKind, UsageError
from sciloop.env import BitstringEnv, CommandEnv, Environment, SegmentCompositionEnv
from sciloop.operators import BitstringMutator, ProposalGenerator


class ConfigError(UsageError):
    pass


def load_config(path: str | Path) -> CampaignConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return CampaignConfig.from_json(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    except (UsageError, TypeError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _target(spec: dict, seed: int) -> str:
    if "target" in spec:
        return str(spec["target"])
    if "length" in spec:
        rng = Rng(int(spec.get("target_seed", seed))).split("target")
        return "".join(str(b) for b in rng.generator.integers(0, 2, size=int(spec["length"])))
    raise ConfigError("bitstring environments need 'target' or 'length'")


def build_environment(config: CampaignConfig) -> Environment:
    spec = dict(config.env)
    kind = spec.pop("type", None)
    try:
        if kind == "bitstring":
            return BitstringEnv(_target(spec, config.task.seed))
        if kind == "segment_composition":
            return SegmentCompositionEnv(_target(spec, config.task.seed), int(spec.get("segments", 4)))
        if kind == "command":
            return CommandEnv(spec["command"], timeout=float(spec.get("timeout", 60.0)),
                              score_field=spec.get("score_field", "score"),
                              kind=SolutionKind(spec.get("kind", "text")),
                              negate=bool(spec.get("negate", False)),
                              suffix=spec.get("suffix", ".txt"))
    except KeyError as exc:
        raise ConfigError(f"env section is missing {exc}") from exc
    except (UsageError, ValueError) as exc:
        raise ConfigError(f"invalid env section: {exc}") from exc
    raise ConfigError(f"unknown env type {kind!r}")


def build_generator(config: CampaignConfig) -> ProposalGenerator:
    spec = dict(config.generator)
    kind = spec.pop("type", "mutate")
    if kind == "mutate":
        return BitstringMutator(float(spec.get("regress_weight", 0.25)))
    if kind == "remote":
        from sciloop.harness.remote import RemoteGenerator, RemoteModelSpec

        try:
            model = RemoteModelSpec.from_dict(spec)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid remote generator section: {exc}") from exc
        return RemoteGenerator(model, kind=SolutionKind(spec.get("kind", "text")))
    raise ConfigError(f"unknown generator type {kind!r}")
