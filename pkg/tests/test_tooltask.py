from sciloop.core import Rng
from sciloop.memory import ProceduralMemory
from sciloop.tooltask import TOOLS, ToolWorld, hint_trial, hints_from_memory, solve_flow


def test_world_is_seeded():
    assert ToolWorld(3).correct == ToolWorld(3).correct
    assert set(ToolWorld(3).correct.values()) <= set(TOOLS)


def test_unhinted_flow_solves():
    world = ToolWorld(1)
    kinds = ["literature", "dataset"]
    outcome, agent = solve_flow(world, kinds, Rng(1))
    assert outcome.solved and outcome.answer == world.expected_answer(kinds)
    assert outcome.calls >= len(kinds) + 2


def test_perfect_hints_give_minimal_calls():
    world = ToolWorld(2)
    kinds = ["compute", "figures", "protocol"]
    hints = {k: [world.correct[k]] for k in kinds}
    outcome, _ = solve_flow(world, kinds, Rng(0), hints)
    assert outcome.solved and outcome.calls == len(kinds) + 2


def test_hints_from_memory_use_successes():
    world = ToolWorld(4)
    spm = ProceduralMemory()
    kinds = ["literature", "compute", "dataset"]
    _, agent = solve_flow(world, kinds, Rng(9))
    from sciloop.tooltask import remember
    remember(spm, "prior", kinds, agent)
    hints = hints_from_memory(spm, kinds)
    assert all(hints[k] == [world.correct[k]] for k in kinds)


def test_call_cap_can_fail():
    world = ToolWorld(5)
    fails = [solve_flow(world, ["literature", "dataset", "compute"], Rng(s), max_calls=1)[0].solved
             for s in range(10)]
    assert not all(fails)


def test_trial_is_deterministic():
    assert hint_trial(7) == hint_trial(7)
