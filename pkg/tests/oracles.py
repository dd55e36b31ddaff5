"""Independent reference implementations used to check the package.

Nothing here imports the search, graph or retrieval code under test; only
the seeded generator is shared, so that both sides draw the same numbers.
"""

from __future__ import annotations

import math

import numpy as np

from sciloop.core import Rng


def plain_mcts(target: str, seed: int, budget: int, c: float = 1.41421356) -> list[tuple[str, float, int]]:
    """Primary-only UCT on a bitstring target starting from all zeros.

    Returns ``(selected id, child score, root visits)`` per step.
    """
    n = len(target)

    def score(bits):
        return sum(a == b for a, b in zip(bits, target)) / n

    main = Rng(seed)
    zeros = "0" * n
    ids = ["root"]
    bits = [zeros]
    parent = [-1]
    kids: list[list[int]] = [[]]
    visits = [1]
    reward = [score(zeros)]
    out = []
    for step in range(1, budget + 1):
        cur = 0
        while kids[cur]:
            unvisited = [k for k in kids[cur] if visits[k] == 0]
            if unvisited:
                cur = unvisited[0]
                break
            means = [reward[k] / visits[k] for k in kids[cur]]
            own = reward[cur] / visits[cur]
            lo, hi = min(means + [own]), max(means + [own])

            def ucb(mean, count):
                exploit = (mean - lo) / (hi - lo) if hi > lo else 0.0
                return exploit + c * math.sqrt(math.log(visits[cur]) / count)

            stay = ucb(own, visits[cur])
            child_vals = [ucb(m, visits[k]) for m, k in zip(means, kids[cur])]
            top = max(child_vals)
            if stay >= top:
                break
            cur = kids[cur][child_vals.index(top)]
        gen = Rng(seed, ("step/%d" % step, "generate"))
        i = int(gen.generator.integers(0, n))
        child_bits = bits[cur][:i] + ("1" if bits[cur][i] == "0" else "0") + bits[cur][i + 1:]
        child_id = "%016x" % int(main.generator.integers(0, 2**64, dtype=np.uint64))
        s = score(child_bits)
        ids.append(child_id)
        bits.append(child_bits)
        parent.append(cur)
        kids.append([])
        kids[cur].append(len(ids) - 1)
        visits.append(0)
        reward.append(0.0)
        node = len(ids) - 1
        while node != -1:
            visits[node] += 1
            reward[node] += s
            node = parent[node]
        out.append((ids[cur], s, visits[0]))
    return out


def simple_paths(adjacency: dict[str, set[str]], seeds, max_hops: int) -> set[tuple[str, ...]]:
    """Every simple path of at most ``max_hops`` edges from a seed, by recursive DFS."""
    found = set()

    def dfs(path):
        found.add(tuple(path))
        if len(path) - 1 == max_hops:
            return
        for nb in adjacency.get(path[-1], ()):
            if nb not in path:
                dfs(path + [nb])

    for s in seeds:
        dfs([s])
    return found


def reachable(edges, start, goal) -> bool:
    adj: dict = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    seen, stack = set(), [start]
    while stack:
        cur = stack.pop()
        if cur == goal:
            return True
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(adj.get(cur, ()))
    return False


def ranked(items, sim):
    """Full ranking by descending similarity, ties by position."""
    scored = [(sim(x), i) for i, x in enumerate(items)]
    return [i for _, i in sorted(scored, key=lambda t: (-t[0], t[1]))]


def dense_cos(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1, 1))
