"""Policies (edit proposers) and values (distance estimators) for search.

A policy proposes single edits given the current program, its rendering,
and the target rendering; a value estimates how far a rendering is from
the target.  Built-ins: the oracle pair (requires the ground-truth
program; test and harness use only) and the pixel-loss hill-climb /
pixel-distance pair.  External neural implementations attach over the wire
protocol in `protocol.py` and are validated engine-side before anything
they propose is applied.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .envs import Environment
from .grammar import Node, NodePath, serialize
from .mutation import Mutation, apply_mutation, sample_mutation_balanced
from .treepath import CANONICAL_SEED, edit_distance, full_path


class PolicyError(Exception):
    pass


@dataclass(frozen=True)
class EditProposal:
    target_path: NodePath
    replacement: Node
    score: float

    @property
    def replacement_tokens(self) -> tuple[str, ...]:
        return serialize(self.replacement).tokens

    def as_mutation(self) -> Mutation:
        return Mutation(self.target_path, self.replacement)


@dataclass(frozen=True)
class PolicyQuery:
    """Wire-facing query shape."""

    current_program: tuple[str, ...]
    current_image: np.ndarray
    target_image: np.ndarray
    k: int


@dataclass(frozen=True)
class ValueQuery:
    image_a: np.ndarray
    image_b: np.ndarray


class OraclePolicy:
    """Proposes the next step of the canonical edit path to a known target.

    Edit paths are computed once per queried program and their intermediate
    states cached, so a rollout that follows the proposals replays one
    path end to end.
    """

    def __init__(self, env: Environment, target: Node, sigma_small: int = 2):
        self.env = env
        self.target = target
        self.sigma_small = sigma_small
        self._next: dict[Node, Mutation] = {}

    def propose(self, tree: Node, current_image, target_image, k: int = 1, render=None):
        if tree == self.target:
            raise PolicyError("query program already equals the target")
        mutation = self._next.get(tree)
        if mutation is None:
            path = full_path(self.env.grammar, tree, self.target, self.sigma_small, seed=CANONICAL_SEED)
            cur = tree
            for m in path.steps:
                self._next.setdefault(cur, m)
                cur = apply_mutation(self.env.grammar, cur, m)
            mutation = self._next[tree]
        return [EditProposal(mutation.target_path, mutation.replacement, 0.0)]


class HillClimbPolicy:
    """Non-neural baseline: samples balanced mutations, renders each, and
    keeps the k with the lowest pixel loss against the target.

    The sample count k' adapts: drawing continues until k proposals beat
    the current program's loss or the iteration cap is reached, so the
    best returned proposal is an actual improvement whenever the sampler
    can find one.  Losses are memoized by token sequence; only programs
    rendered for the first time cost an expansion.
    """

    def __init__(
        self,
        env: Environment,
        rng: random.Random,
        max_iters: int = 20000,
        sigma_small: int = 2,
    ):
        self.env = env
        self.rng = rng
        self.max_iters = max_iters
        self.sigma_small = sigma_small
        self._loss_memo: dict[tuple[str, ...], float] = {}

    def propose(self, tree: Node, current_image, target_image, k: int = 1, render=None):
        render = render or self.env.render
        current_loss = self.env.loss(current_image, target_image)
        scored: list[tuple[float, int, EditProposal]] = []
        improvers = 0
        seen: set[Node] = set()
        for i in range(self.max_iters):
            m = sample_mutation_balanced(self.env.grammar, tree, self.sigma_small, self.rng)
            candidate = apply_mutation(self.env.grammar, tree, m)
            if candidate in seen:
                continue
            seen.add(candidate)
            key = serialize(candidate).tokens
            loss = self._loss_memo.get(key)
            solved = False
            if loss is None:
                image = render(candidate)
                loss = self.env.loss(image, target_image)
                self._loss_memo[key] = loss
                solved = self.env.is_solved(image, target_image)
            if loss < current_loss - 1e-12:
                improvers += 1
                scored.append((-loss, -i, EditProposal(m.target_path, m.replacement, -loss)))
                if solved or improvers >= k:
                    break
            else:
                scored.append((-loss, -i, EditProposal(m.target_path, m.replacement, -loss)))
        scored.sort(key=lambda t: (t[0], t[1]), reverse=True)
        return [p for _, _, p in scored[:k]]


class OracleValue:
    """Ground-truth canonical edit distance to a known target program."""

    def __init__(self, env: Environment, target: Node, sigma_small: int = 2):
        self.env = env
        self.target = target
        self.sigma_small = sigma_small
        self._cache: dict[Node, int] = {}

    def estimate(self, tree: Node, image) -> float:
        value = self._cache.get(tree)
        if value is None:
            value = edit_distance(self.env.grammar, tree, self.target, self.sigma_small)
            self._cache[tree] = value
        return float(value)


class PixelValue:
    """Heuristic fallback: pixel loss against the target image (lower is
    better, same ordering convention as a predicted edit distance)."""

    def __init__(self, env: Environment, target_image):
        self.env = env
        self.target_image = target_image

    def estimate(self, tree: Node, image) -> float:
        return self.env.loss(image, self.target_image)


def oracle_value(env: Environment, za: Node, zb: Node, sigma_small: int = 2) -> int:
    return edit_distance(env.grammar, za, zb, sigma_small)


def pixel_value(env: Environment, image_a, image_b) -> float:
    return env.loss(image_a, image_b)
