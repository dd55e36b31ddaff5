"""Search a 32-bit segment-composition task and watch the operators at work.

Run: python3 demos/segment_search.py [budget] [seed]
"""

import sys
from collections import Counter

from sciloop.core import CampaignConfig
from sciloop.harness.factory import build_environment, build_generator
from sciloop.memory import CognitiveMemory
from sciloop.search import init_state, run


def main(budget: int = 2000, seed: int = 1) -> None:
    config = CampaignConfig.from_dict({
        "task": {"id": "demo", "objective_text": "assemble four 8-bit segments", "budget": budget, "seed": seed},
        "memory_enabled": True,
        "env": {"type": "segment_composition", "length": 32, "segments": 4},
    })
    env, gen = build_environment(config), build_generator(config)
    memory = CognitiveMemory.from_config(config)
    state = init_state(config, env)
    print(f"target   {env.target}")
    print(f"baseline {state.graph.nodes['root'].solution.payload} score {state.best[1]:.3f}")

    def report(event):
        if event.score is not None and event.score == event.best_score and event.status == "ok":
            node = state.graph.nodes[event.child]
            print(f"step {event.step:5d} {event.operator:<13} {node.solution.payload} {event.score:.3f}")

    run(state, generator=gen, env=env, memory=memory, on_event=report)
    ops = Counter(e.operator for e in state.events)
    print(f"best {state.best[1]:.3f} after {state.evals_used} evaluations; operators {dict(ops)}")
    print(f"branches {len(state.graph.branches)}; memory {memory.stats()}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:3]))
