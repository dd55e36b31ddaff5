import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sciloop.core import Evaluation, Solution, SolutionKind, UsageError
from sciloop.solution_graph import NodeStatus, OperatorTag, SolutionGraph


def sol(bits="0000"):
    return Solution(bits, SolutionKind.BITSTRING)


def graph_with_root(score=0.25):
    g = SolutionGraph()
    g.add_root(sol(), Evaluation(score))
    return g


def child(g, parent, score=None, tag=OperatorTag.PRIMARY, refs=()):
    nid = g.add_child(parent, sol("0001"), tag, refs)
    if score is not None:
        g.backpropagate(nid, score)
    return nid


def test_add_root():
    g = graph_with_root()
    root = g.nodes[g.root]
    assert len(g) == 1 and root.visits == 1 and root.total_reward == 0.25
    assert root.operator_tag is OperatorTag.ROOT
    assert g.ancestors(g.root) == [g.root]
    with pytest.raises(UsageError):
        g.add_root(sol(), Evaluation(0.1))


def test_branches():
    g = graph_with_root()
    a = child(g, g.root, 0.3)
    b = child(g, a, 0.4)
    c = child(g, g.root, 0.2)
    assert g.nodes[a].branch == g.nodes[b].branch == "b0"
    assert g.nodes[c].branch == "b1"
    assert g.nodes[a].visits == 2 and g.nodes[b].visits == 1


def test_add_child_errors():
    g = graph_with_root()
    with pytest.raises(UsageError):
        g.add_child("nope", sol(), OperatorTag.PRIMARY)
    with pytest.raises(UsageError):
        g.add_child(g.root, sol(), OperatorTag.CROSS_BRANCH)
    with pytest.raises(UsageError):
        g.add_child(g.root, sol(), OperatorTag.ROOT)
    with pytest.raises(UsageError):
        g.add_child(g.root, sol(), OperatorTag.CROSS_BRANCH, refs=["x1"], node_id="x1")


def test_cross_branch_child_keeps_parent_chain():
    g = graph_with_root()
    a = child(g, g.root, 0.5)
    b = child(g, g.root, 0.9)
    x = child(g, a, tag=OperatorTag.CROSS_BRANCH, refs=[b])
    assert g.nodes[x].ref_edges == [b]
    assert g.ancestors(x) == [x, a, g.root]
    visits_b = g.nodes[b].visits
    g.backpropagate(x, 0.7)
    assert g.nodes[b].visits == visits_b
    assert g.edges()["cross_branch"] == [[x, b]]


def test_ancestors_chain_and_unknown():
    g = graph_with_root()
    a = child(g, g.root, 0.3)
    b = child(g, a, 0.4)
    assert g.ancestors(b) == [b, a, g.root]
    assert len(g.ancestors(b)) == g.nodes[b].depth + 1
    with pytest.raises(UsageError):
        g.ancestors("zzz")


def test_backprop_arithmetic():
    g = graph_with_root(0.0)
    a = child(g, g.root)
    b = child(g, a)
    g.backpropagate(b, 1.0)
    assert g.nodes[g.root].visits == 2 and g.nodes[g.root].total_reward == 1.0
    g2 = graph_with_root(0.0)
    x, y = child(g2, g2.root), child(g2, g2.root)
    g2.backpropagate(x, 0.5)
    g2.backpropagate(y, 1.5)
    r = g2.nodes[g2.root]
    assert (r.total_reward - 0.0) / (r.visits - 1) == 1.0
    with pytest.raises(UsageError):
        g2.backpropagate(x, math.nan)


def test_failed_node_excluded():
    g = graph_with_root()
    a = child(g, g.root)
    g.mark_failed(a, "exit: boom")
    assert g.nodes[a].status is NodeStatus.EVALUATION_FAILED
    assert g.evaluated_nodes() == [g.nodes[g.root]]
    with pytest.raises(UsageError):
        g.backpropagate(a, 0.5)


def test_top_nodes():
    g = graph_with_root(0.0)
    ids = [child(g, g.root, s) for s in (0.2, 0.9, 0.5)]
    child(g, g.root)
    assert g.top_nodes(2) == [ids[1], ids[2]]
    assert SolutionGraph.top_nodes(graph_with_root(), 1) == ["root"]
    tie = child(g, g.root, 0.9)
    assert g.top_nodes(2) == [ids[1], tie]


def _branch(scores):
    g = graph_with_root(0.0)
    prev = g.root
    for s in scores:
        prev = child(g, prev, s)
    return g


@pytest.mark.parametrize("scores,expected", [
    ([0.5, 0.6, 0.7], False),
    ([0.7, 0.6, 0.6, 0.5], True),
    ([0.5, 0.6], False),
    ([0.5, 0.4, 0.6, 0.6], False),
])
def test_is_stagnant(scores, expected):
    assert _branch(scores).is_stagnant("b0", 3) is expected


def test_is_stagnant_no_branch():
    assert graph_with_root().is_stagnant(None, 3) is False


def test_roundtrip_and_dot():
    g = graph_with_root()
    a = child(g, g.root, 0.5)
    b = child(g, g.root, 0.75)
    child(g, a, 0.6, OperatorTag.AGGREGATION, [b])
    again = SolutionGraph.from_dict(json.loads(json.dumps(g.to_dict())))
    assert again.to_dict() == g.to_dict()
    dot = g.to_dot()
    assert dot.startswith("digraph") and "dashed" in dot


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.floats(-5, 5), st.booleans()), max_size=60))
def test_conservation_and_tree_invariants(ops):
    g = graph_with_root(0.0)
    total, count = 0.0, 0
    for pick, score, fail in ops:
        nodes = [n.id for n in g.evaluated_nodes()]
        nid = g.add_child(nodes[pick % len(nodes)], sol(), OperatorTag.PRIMARY)
        if fail:
            g.mark_failed(nid, "x")
        else:
            g.backpropagate(nid, score)
            total += score
            count += 1
    root = g.nodes[g.root]
    assert root.visits == 1 + count
    assert math.isclose(root.total_reward, total, abs_tol=1e-9)
    for n in g.nodes.values():
        assert n.visits >= sum(g.nodes[c].visits for c in n.children)
        if n.id != g.root:
            anc = g.ancestors(n.id)
            assert g.nodes[anc[-2]].branch == n.branch
