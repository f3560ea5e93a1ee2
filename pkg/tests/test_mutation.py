import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treesynth.grammar import constrained_sample, parse, serialize, text_form
from treesynth.mutation import (
    Mutation,
    MutationError,
    apply_mutation,
    candidate_sites,
    noise_chain,
    sample_mutation,
    sample_mutation_balanced,
)

from conftest import sample_programs


def test_candidate_set_single_primitive(csg2d):
    t = parse(csg2d.grammar, "(Circle 1 2 3)")
    sites = candidate_sites(csg2d.grammar, t, 2)
    heads = sorted(node.head for _, node in sites)
    assert heads == ["circle", "number", "number", "number"]
    assert ((), t) in [(p, n) for p, n in sites]


def test_candidate_set_excludes_large_root(csg2d):
    g = csg2d.grammar
    t = constrained_sample(g, "s", 7, 8, random.Random(0))
    assert t.sigma == 8
    paths = [p for p, _ in candidate_sites(g, t, 2)]
    assert () not in paths
    # but ops of large binops are candidates (sigma 0)
    assert any(n.head == "op" for _, n in candidate_sites(g, t, 2))


def test_candidate_set_sigma_bound(csg2d):
    g = csg2d.grammar
    rng = random.Random(1)
    for _ in range(100):
        t = constrained_sample(g, "s", 0, 8, rng)
        for _, node in candidate_sites(g, t, 2):
            assert node.sigma <= 2


def test_mutation_invariants_uniform_and_balanced(csg2d):
    g = csg2d.grammar
    rng = random.Random(3)
    for sampler in (sample_mutation, sample_mutation_balanced):
        for _ in range(500):
            t = constrained_sample(g, "s", 0, 8, rng)
            m = sampler(g, t, 2, rng)
            original = g.node_at(t, m.target_path)
            assert m.replacement.sigma <= 2
            assert m.replacement != original
            assert m.replacement.context == original.context
            mutated = apply_mutation(g, t, m)
            assert parse(g, serialize(mutated).tokens) == mutated


def test_uniform_node_selection_frequencies(csg2d):
    g = csg2d.grammar
    t = parse(csg2d.grammar, "(+ (Quad 1 0 A 3 angle_135) (Circle C 2 1))")
    sites = candidate_sites(g, t, 2)
    n = 10000
    rng = random.Random(7)
    counts = Counter()
    for _ in range(n):
        m = sample_mutation(g, t, 2, rng)
        counts[m.target_path] += 1
    p = 1.0 / len(sites)
    bound = 3 * (n * p * (1 - p)) ** 0.5
    for path, _ in sites:
        assert abs(counts[path] - n * p) <= bound, (path, counts[path])


def test_balanced_group_selection(csg2d):
    # number sites vastly outnumber the lone small binop, yet the binop's
    # rule group is picked with probability ~1/4 here (four groups present)
    g = csg2d.grammar
    t = parse(g, "(+ (+ (Circle 1 2 3) (Circle 4 5 6)) (Quad 1 2 3 4 angle_0))")
    n = 8000
    rng = random.Random(11)
    binop_hits = 0
    for _ in range(n):
        m = sample_mutation_balanced(g, t, 2, rng)
        if g.node_at(t, m.target_path).head == "binop":
            binop_hits += 1
    assert abs(binop_hits / n - 0.25) < 0.03


def test_apply_involution(csg2d):
    g = csg2d.grammar
    rng = random.Random(5)
    for _ in range(200):
        t = constrained_sample(g, "s", 0, 8, rng)
        m = sample_mutation_balanced(g, t, 2, rng)
        original = g.node_at(t, m.target_path)
        t2 = apply_mutation(g, t, m)
        assert apply_mutation(g, t2, Mutation(m.target_path, original)) == t
        assert t2.sigma == t.sigma - original.sigma + m.replacement.sigma


def test_apply_structural_sharing(csg2d):
    g = csg2d.grammar
    t = parse(g, "(+ (Quad 1 0 A 3 angle_135) (Circle C 2 1))")
    m = sample_mutation_balanced(g, t, 2, random.Random(0))
    t2 = apply_mutation(g, t, m)
    shared = sum(1 for a, b in zip(t.children, t2.children) if a is b)
    assert shared >= len(t.children) - 1  # at most one child spine rebuilt


def test_apply_errors(csg2d):
    g = csg2d.grammar
    t = parse(g, "(Circle 1 2 3)")
    repl = constrained_sample(g, "angle", -1, 2, random.Random(0))
    with pytest.raises(MutationError):
        apply_mutation(g, t, Mutation((99,), repl))
    with pytest.raises(MutationError):
        apply_mutation(g, t, Mutation((2,), repl))  # number slot, angle replacement


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(1, 10))
def test_chains_stay_parseable(csg2d, seed, s):
    g = csg2d.grammar
    z0 = constrained_sample(g, "s", 0, 8, random.Random(seed))
    chain = noise_chain(g, z0, s, seed=seed)
    assert len(chain.mutations) == s
    cur = chain.states[0]
    for m, nxt in zip(chain.mutations, chain.states[1:]):
        cur = apply_mutation(g, cur, m)
        assert cur == nxt
        assert parse(g, serialize(cur).tokens) == cur


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(1, 10))
def test_chains_stay_parseable_tinysvg(tinysvg, seed, s):
    g = tinysvg.grammar
    z0 = constrained_sample(g, "s", 0, 8, random.Random(seed))
    chain = noise_chain(g, z0, s, seed=seed)
    for state in chain.states:
        assert parse(g, serialize(state).tokens) == state


def test_single_step_chain_differs(csg2d):
    g = csg2d.grammar
    z0 = constrained_sample(g, "s", 0, 8, random.Random(12))
    chain = noise_chain(g, z0, 1, seed=12)
    assert chain.states[1] != z0


def test_chain_deterministic(csg2d):
    g = csg2d.grammar
    z0 = constrained_sample(g, "s", 0, 8, random.Random(1))
    a = noise_chain(g, z0, 5, seed=42)
    b = noise_chain(g, z0, 5, seed=42)
    assert [text_form(s) for s in a.states] == [text_form(s) for s in b.states]
