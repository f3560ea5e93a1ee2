"""Forward noising: small grammar-valid replacement mutations and noise chains.

A mutation replaces one subtree by a freshly sampled subtree that is valid
in the same production context, carries at most `sigma_small` primitives,
and differs from what it replaces.  Two node samplers are provided: the
plain uniform-over-candidates one, and the production-rule-balanced variant
(pick a rule first, then a node of that rule) that counters the tendency of
uniform sampling to grow expressions.  The balanced sampler is the default
for chains and training data.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .grammar import (
    Grammar,
    Leaf,
    Node,
    NodePath,
    SampleError,
    enumerate_trees,
    sample_unconstrained,
)

SIGMA_SMALL = 2


class MutationError(Exception):
    pass


@dataclass(frozen=True)
class Mutation:
    target_path: NodePath
    replacement: Node


@dataclass(frozen=True)
class NoiseChain:
    states: tuple[Node, ...]
    mutations: tuple[Mutation, ...]
    seed: int


def candidate_nodes(grammar: Grammar, tree: Node, sigma_small: int = SIGMA_SMALL) -> list[NodePath]:
    """Paths of mutation-site nodes, in pre-order."""
    return [path for path, _ in candidate_sites(grammar, tree, sigma_small)]


def candidate_sites(
    grammar: Grammar, tree: Node, sigma_small: int = SIGMA_SMALL
) -> list[tuple[NodePath, Node]]:
    """(path, node) pairs for nodes with sigma <= sigma_small whose context
    rule offers at least two derivable values."""
    out: list[tuple[NodePath, Node]] = []

    def walk(node, path: NodePath):
        if isinstance(node, Leaf):
            return
        if node.sigma <= sigma_small and node.context in grammar.mutable_rules:
            out.append((path, node))
        for i, c in enumerate(node.children):
            walk(c, path + (i,))

    walk(tree, ())
    return out


def _sample_replacement(grammar: Grammar, node: Node, sigma_small: int, rng: random.Random) -> Node:
    # Generate-and-filter: expand freely, keep draws that fit the size
    # budget and differ from the original.
    for _ in range(200):
        cand = sample_unconstrained(grammar, node.context, rng)
        if cand.sigma <= sigma_small and cand != node:
            return cand
    # Finite rules: enumerate every small derivation and pick a differing one.
    try:
        options = [
            t for t in enumerate_trees(grammar, node.context, max_sigma=sigma_small, limit=4096)
            if t != node
        ]
    except SampleError as e:
        raise MutationError(f"cannot find a replacement differing from the original: {e}") from e
    if not options:
        raise MutationError(f"rule '{node.context}' admits no alternative value")
    return options[rng.randrange(len(options))]


def sample_mutation(
    grammar: Grammar, tree: Node, sigma_small: int = SIGMA_SMALL, rng: random.Random | None = None
) -> Mutation:
    """Uniform-node variant: mutation site uniform over all candidates."""
    rng = rng or random.Random()
    sites = candidate_sites(grammar, tree, sigma_small)
    if not sites:
        raise MutationError("tree has no mutable candidate nodes")
    path, node = sites[rng.randrange(len(sites))]
    return Mutation(path, _sample_replacement(grammar, node, sigma_small, rng))


def balance_group(grammar: Grammar, node: Node) -> str:
    """Balance key: shape-bearing rules count individually; zero-primitive
    value rules (numbers, angles, operators, colors, ...) share one bucket,
    which keeps expression-size drift neutral under repeated mutation."""
    return node.head if grammar.max_sigma[node.head] > 0 else "(value)"


def sample_mutation_balanced(
    grammar: Grammar, tree: Node, sigma_small: int = SIGMA_SMALL, rng: random.Random | None = None
) -> Mutation:
    """Rule-balanced variant: pick a production-rule group uniformly among
    the groups present in the candidate set, then a node of that group."""
    rng = rng or random.Random()
    sites = candidate_sites(grammar, tree, sigma_small)
    if not sites:
        raise MutationError("tree has no mutable candidate nodes")
    groups: dict[str, list[tuple[NodePath, Node]]] = {}
    for path, node in sites:
        groups.setdefault(balance_group(grammar, node), []).append((path, node))
    rules = sorted(groups)
    members = groups[rules[rng.randrange(len(rules))]]
    path, node = members[rng.randrange(len(members))]
    return Mutation(path, _sample_replacement(grammar, node, sigma_small, rng))


def apply_mutation(grammar: Grammar, tree: Node, mutation: Mutation) -> Node:
    """Replace the node at `target_path`; untouched subtrees are shared."""

    def rebuild(node, path: NodePath):
        if not path:
            if isinstance(node, Leaf):
                raise MutationError("mutation path addresses a literal token")
            if node.context != mutation.replacement.context:
                raise MutationError(
                    f"production context mismatch: node is {node.context!r}, "
                    f"replacement is {mutation.replacement.context!r}"
                )
            return mutation.replacement
        i = path[0]
        if isinstance(node, Leaf) or i >= len(node.children):
            raise MutationError(f"mutation path {mutation.target_path} does not resolve")
        children = list(node.children)
        children[i] = rebuild(children[i], path[1:])
        return Node(node.head, node.context, node.alt_index, tuple(children))

    return rebuild(tree, mutation.target_path)


def noise_chain(
    grammar: Grammar, z0: Node, s: int, sigma_small: int = SIGMA_SMALL, seed: int = 0
) -> NoiseChain:
    """Apply `s` balanced mutations; returns all intermediate states."""
    if s < 1:
        raise MutationError("chains need at least one step")
    rng = random.Random(seed)
    states = [z0]
    mutations = []
    for _ in range(s):
        m = sample_mutation_balanced(grammar, states[-1], sigma_small, rng)
        mutations.append(m)
        states.append(apply_mutation(grammar, states[-1], m))
    return NoiseChain(tuple(states), tuple(mutations), seed)
