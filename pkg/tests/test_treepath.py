import random
from collections import deque

import pytest

from treesynth.grammar import (
    constrained_sample,
    enumerate_trees,
    load_grammar,
    parse,
    serialize,
    text_form,
)
from treesynth.mutation import (
    Mutation,
    apply_mutation,
    candidate_sites,
    noise_chain,
)
from treesynth.treepath import (
    PathError,
    edit_distance,
    first_step,
    full_path,
    mismatch_weight,
)

# Tiny grammar for exhaustive BFS oracles over the mutation space.
TINY = """
%start s
%primitives L
s: pair | leaf
pair: (P s s)
leaf: (L color)
color: red | green | blue
"""


@pytest.fixture(scope="module")
def tiny():
    return load_grammar(TINY, name="tiny")


def all_legal_mutations(g, tree, sigma_small=2):
    """The full small-mutation action space of a tree."""
    out = []
    for path, node in candidate_sites(g, tree, sigma_small):
        for repl in enumerate_trees(g, node.context, max_sigma=sigma_small, limit=100000):
            if repl != node:
                out.append(Mutation(path, repl))
    return out


def bfs_distance(g, za, zb, sigma_small=2, limit=200000):
    """Shortest mutation-path length via breadth-first search."""
    if za == zb:
        return 0
    seen = {za}
    frontier = deque([(za, 0)])
    while frontier:
        tree, d = frontier.popleft()
        for m in all_legal_mutations(g, tree, sigma_small):
            nxt = apply_mutation(g, tree, m)
            if nxt == zb:
                return d + 1
            if nxt not in seen and nxt.sigma <= 4 and len(seen) < limit:
                seen.add(nxt)
                frontier.append((nxt, d + 1))
    raise AssertionError("BFS failed to reach the target")


def test_first_step_equal_trees(csg2d):
    t = constrained_sample(csg2d.grammar, "s", 0, 8, random.Random(0))
    assert first_step(csg2d.grammar, t, t) == []
    assert edit_distance(csg2d.grammar, t, t) == 0


def test_first_step_direct_color_swap(rainbow):
    g = rainbow.grammar
    za = parse(g, "(Arrange h (Rectangle 3 3 green none 0) (Ellipse 2 2 blue black 1) 1)")
    zb = parse(g, "(Arrange h (Rectangle 3 3 red none 0) (Ellipse 2 2 blue black 1) 1)")
    muts = first_step(g, za, zb)
    assert len(muts) == 1
    assert text_form(muts[0].replacement) == "red"


def test_first_step_legal_and_reduces_distance_rainbow(rainbow):
    g = rainbow.grammar
    rng = random.Random(5)
    for _ in range(200):
        za = constrained_sample(g, "s", 0, 3, rng)
        zb = constrained_sample(g, "s", 0, 3, rng)
        if za == zb:
            continue
        muts = first_step(g, za, zb, rng=random.Random(0))
        assert muts
        legal = all_legal_mutations(g, za)
        cur = za
        for m in muts:
            assert any(m.target_path == lm.target_path and m.replacement == lm.replacement for lm in legal) or (
                # skeleton replacements are sampled, so membership is checked structurally
                m.replacement.sigma <= 2 and m.replacement != g.node_at(za, m.target_path)
            )
            cur = apply_mutation(g, cur, m)
        assert mismatch_weight(cur, zb) < mismatch_weight(za, zb)


def test_first_step_small_mutations_in_action_space(tiny):
    g = tiny
    rng = random.Random(9)
    for _ in range(50):
        za = constrained_sample(g, "s", 0, 3, rng)
        zb = constrained_sample(g, "s", 0, 3, rng)
        if za == zb:
            continue
        legal = all_legal_mutations(g, za)
        for m in first_step(g, za, zb, rng=random.Random(1)):
            assert any(m.target_path == lm.target_path and m.replacement == lm.replacement for lm in legal)


def test_canonical_distance_upper_bounds_bfs(tiny):
    g = tiny
    rng = random.Random(3)
    pairs = 0
    while pairs < 12:
        za = constrained_sample(g, "s", 0, 2, rng)
        zb = constrained_sample(g, "s", 0, 2, rng)
        if za == zb:
            continue
        pairs += 1
        optimal = bfs_distance(g, za, zb)
        canonical = edit_distance(g, za, zb)
        assert canonical >= optimal
        assert canonical >= 1


def test_full_path_replays_csg2d(csg2d):
    g = csg2d.grammar
    rng = random.Random(0)
    for _ in range(300):
        za = constrained_sample(g, "s", 0, 8, rng)
        zb = constrained_sample(g, "s", 0, 8, rng)
        path = full_path(g, za, zb, seed=0)
        cur = za
        for m in path.steps:
            original = g.node_at(cur, m.target_path)
            assert m.replacement.sigma <= 2
            assert m.replacement != original
            cur = apply_mutation(g, cur, m)
        assert cur == zb
        assert len(path.steps) <= 2 * zb.size


def test_full_path_replays_tinysvg(tinysvg):
    g = tinysvg.grammar
    rng = random.Random(1)
    for _ in range(200):
        za = constrained_sample(g, "s", 0, 8, rng)
        zb = constrained_sample(g, "s", 0, 8, rng)
        path = full_path(g, za, zb, seed=0)
        cur = za
        for m in path.steps:
            cur = apply_mutation(g, cur, m)
        assert cur == zb


def test_full_path_deterministic(csg2d):
    g = csg2d.grammar
    za = constrained_sample(g, "s", 0, 8, random.Random(10))
    zb = constrained_sample(g, "s", 0, 8, random.Random(11))
    p1 = full_path(g, za, zb, seed=7)
    p2 = full_path(g, za, zb, seed=7)
    assert p1.steps == p2.steps


def test_single_mutation_path_length_one(csg2d):
    g = csg2d.grammar
    rng = random.Random(2)
    hits = 0
    for _ in range(100):
        z0 = constrained_sample(g, "s", 0, 8, rng)
        chain = noise_chain(g, z0, 1, seed=rng.randrange(2**32))
        z1 = chain.states[-1]
        m = chain.mutations[0]
        original = g.node_at(z0, m.target_path)
        if original.sigma <= 2 and m.replacement.sigma <= 2:
            path = full_path(g, z1, z0, seed=0)
            assert len(path.steps) == 1
            assert path.steps[0].target_path == m.target_path
            assert path.steps[0].replacement == original
            hits += 1
    assert hits > 50


def test_root_context_mismatch(csg2d):
    g = csg2d.grammar
    num = constrained_sample(g, "number", -1, 2, random.Random(0))
    expr = constrained_sample(g, "s", 0, 2, random.Random(0))
    with pytest.raises(PathError):
        first_step(g, num, expr)


def test_first_step_linear_node_visits(csg2d):
    # cost proxy: mismatch_weight walks the same traversal; sizes grow
    # linearly, runtime is covered by the acceptance timing gate
    g = csg2d.grammar
    rng = random.Random(4)
    za = constrained_sample(g, "s", 7, 8, rng)
    zb = constrained_sample(g, "s", 7, 8, rng)
    muts = first_step(g, za, zb, rng=random.Random(0))
    assert 1 <= len(muts) <= za.size + zb.size
