"""``sciloop`` command line: run, resume and inspect search campaigns.

Exit codes: 0 success, 2 configuration error, 3 campaign failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from sciloop.harness.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from sciloop.harness.factory import ConfigError, build_environment, build_generator, load_config
from sciloop.memory import CognitiveMemory
from sciloop.search import init_state, run

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3

log = logging.getLogger("sciloop")


def bundled_config(name: str = "bitstring") -> Path:
    return Path(str(resources.files("sciloop.harness") / "configs" / f"{name}.json"))


def _campaign(state, memory, out: Path, max_steps: int | None, every: int | None) -> None:
    generator = build_generator(state.config)
    env = build_environment(state.config)
    remaining = max_steps
    while not state.finished and (remaining is None or remaining > 0):
        chunk = every if every else remaining
        if remaining is not None and chunk is not None:
            chunk = min(chunk, remaining)
        before = len(state.events)
        run(state, generator=generator, env=env, memory=memory, max_steps=chunk)
        taken = len(state.events) - before
        if remaining is not None:
            remaining -= taken
        save_checkpoint(state, out, memory=memory)
        if taken == 0:
            break
    save_checkpoint(state, out, memory=memory)
    best_id, score = state.best
    solution = out / "best_solution.txt"
    solution.write_text(state.graph.nodes[best_id].solution.payload + "\n")
    print(f"best score: {score:.6g}")
    print(f"best node: {best_id}")
    print(f"solution: {solution}")


def cmd_run(args) -> int:
    config = load_config(args.config)
    env = build_environment(config)
    build_generator(config)
    state = init_state(config, env)
    memory = CognitiveMemory.from_config(config) if config.memory_enabled else None
    _campaign(state, memory, Path(args.out), args.max_steps, args.checkpoint_every)
    return EXIT_OK


def cmd_resume(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    _campaign(ckpt.state, ckpt.memory, Path(args.checkpoint), args.max_steps, args.checkpoint_every)
    return EXIT_OK


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    state, graph = ckpt.state, ckpt.state.graph
    print(f"steps: {state.step_index}  evaluations: {state.evals_used}/{state.budget}  "
          f"nodes: {len(graph)}  branches: {len(graph.branches)}")
    print(f"best: {state.best[0]} score {state.best[1]:.6g}")
    print(f"{'node':<18} {'score':>8} {'operator':<13} {'branch':<6} depth visits")
    for nid in graph.top_nodes(args.top):
        n = graph.nodes[nid]
        print(f"{n.id:<18} {n.score.score:>8.4g} {n.operator_tag.value:<13} "
              f"{n.branch or '-':<6} {n.depth:>5} {n.visits:>6}")
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    graph = ckpt.state.graph
    text = graph.to_dot() if args.format == "dot" else json.dumps(graph.to_dict(), indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_memory_stats(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.memory is None:
        print(json.dumps({"memory_enabled": False}))
    else:
        print(json.dumps({"memory_enabled": True, **ckpt.memory.stats()}, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sciloop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="start a campaign from a config file")
    p.add_argument("--config", required=True, help="campaign JSON ('bundled:bitstring' for the example)")
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue a campaign from its checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("inspect", help="summarise a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("export", help="write the solution graph as JSON or DOT")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("memory-stats", help="tier sizes of the campaign memory")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_memory_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "config", "").startswith("bundled:"):
        args.config = bundled_config(args.config.split(":", 1)[1])
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("campaign failed", exc_info=True)
        print(f"campaign failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
