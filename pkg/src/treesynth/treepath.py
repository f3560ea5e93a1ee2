"""Reverse mutation paths between two programs.

Walking both trees top-down in lockstep, subtree pairs that already agree
on their production recurse into children; a mismatched pair whose sides
both fit the small-mutation budget becomes a direct replacement; a larger
mismatch is bridged by sampling a small skeleton anchored on the target's
root production and tightening it toward the target while the budget
allows.  Each round strictly reduces a structural distance, so repeating
the first-step computation yields a full edit path in a bounded number of
small mutations.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .grammar import Grammar, Leaf, Node, constrained_sample, shallow_eq
from .mutation import Mutation, apply_mutation

SIGMA_SMALL = 2

CANONICAL_SEED = 0


class PathError(Exception):
    pass


@dataclass(frozen=True)
class EditPath:
    steps: tuple[Mutation, ...]
    source: Node
    target: Node
    seed: int

    def __len__(self):
        return len(self.steps)


def first_step(
    grammar: Grammar,
    za: Node,
    zb: Node,
    sigma_small: int = SIGMA_SMALL,
    rng: random.Random | None = None,
) -> list[Mutation]:
    """First round of small mutations moving za toward zb.

    Returns [] iff the trees are equal.  Applying every returned mutation
    to za strictly decreases mismatch_weight(za, zb).
    """
    if za.context != zb.context:
        raise PathError(
            f"production-context mismatch at root: {za.context!r} vs {zb.context!r}"
        )
    rng = rng or random.Random(CANONICAL_SEED)
    out: list[Mutation] = []
    _walk(grammar, za, zb, (), out, sigma_small, rng)
    return out


def _walk(g: Grammar, a, b, path, out: list[Mutation], ss: int, rng: random.Random):
    if a is b or a == b:
        return
    if shallow_eq(a, b):
        for i, (ca, cb) in enumerate(zip(a.children, b.children)):
            _walk(g, ca, cb, path + (i,), out, ss, rng)
        return
    # A mismatch always lands on interior nodes: literal tokens only occur
    # inside a production, and matching productions have matching literals.
    assert isinstance(a, Node) and isinstance(b, Node)
    if a.sigma <= ss and b.sigma <= ss:
        out.append(Mutation(path, b))
        return
    out.append(Mutation(path, _skeleton_toward(g, a, b, ss, rng)))


def _skeleton_toward(g: Grammar, a: Node, b: Node, ss: int, rng: random.Random) -> Node:
    """Small replacement for `a` anchored on b's root production where the
    budget permits, tightened toward b."""
    prod = g.node_production(b)
    anchored = g._prod_min_sigma(prod) <= ss
    for _ in range(100):
        if anchored:
            skel = constrained_sample(g, a.context, -1, ss, rng, force_production=prod)
        else:
            skel = constrained_sample(g, a.context, -1, ss, rng)
        skel = _tighten(g, skel, b, ss, rng)
        if skel != a:
            return skel
    raise PathError("could not construct a replacement differing from the source")


def _tighten(g: Grammar, skel: Node, b: Node, ss: int, rng: random.Random) -> Node:
    if not shallow_eq(skel, b):
        return skel
    diffs: list[Mutation] = []
    for i, (ca, cb) in enumerate(zip(skel.children, b.children)):
        _walk(g, ca, cb, (i,), diffs, ss, rng)
    for m in diffs:
        cand = apply_mutation(g, skel, m)
        if cand.sigma > ss:
            break  # budget reached; later path steps continue the alignment
        skel = cand
    return skel


def full_path(
    grammar: Grammar,
    za: Node,
    zb: Node,
    sigma_small: int = SIGMA_SMALL,
    seed: int = CANONICAL_SEED,
) -> EditPath:
    """Complete edit path from za to zb; deterministic given seed."""
    rng = random.Random(seed)
    if za.context != zb.context:
        raise PathError(
            f"production-context mismatch at root: {za.context!r} vs {zb.context!r}"
        )
    bound = 4 * (za.size + zb.size)
    steps: list[Mutation] = []
    cur = za
    while cur != zb:
        muts: list[Mutation] = []
        _walk(grammar, cur, zb, (), muts, sigma_small, rng)
        if not muts:
            raise PathError("no progress despite differing trees")
        for m in muts:
            cur = apply_mutation(grammar, cur, m)
            steps.append(m)
            if len(steps) > bound:
                raise PathError(f"path exceeded the {bound}-step termination bound")
    return EditPath(tuple(steps), za, zb, seed)


def edit_distance(
    grammar: Grammar, za: Node, zb: Node, sigma_small: int = SIGMA_SMALL
) -> int:
    """Length of the canonical (seed-0) edit path; 0 iff trees are equal."""
    return len(full_path(grammar, za, zb, sigma_small, seed=CANONICAL_SEED))


def mismatch_weight(a, b) -> int:
    """Structural distance used for the progress guarantee: target-side node
    count summed over maximal mismatched subtree pairs."""
    if a is b or a == b:
        return 0
    if shallow_eq(a, b):
        return sum(mismatch_weight(ca, cb) for ca, cb in zip(a.children, b.children))
    return b.size
