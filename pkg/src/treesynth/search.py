"""Denoising as search: policy rollouts and value-guided beam search.

Cost accounting follows the compilation-count convention: every program
materialized and rendered is one node expansion, including renders a
policy performs internally while scoring its own proposals, and the
expansion budget is enforced at the renderer.  Beam search keeps a
generational frontier: each iteration expands every node of the current
beam, children are rendered, valued, merged, and pruned back to the beam
size; the best-scoring program ever rendered is tracked globally.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field

import numpy as np

from .envs import Environment
from .grammar import Node, constrained_sample, serialize, text_form
from .mutation import MutationError, apply_mutation
from .policies import PolicyError

log = logging.getLogger(__name__)


class BudgetExhausted(Exception):
    pass


@dataclass
class SearchConfig:
    beam_size: int = 64
    expansion_budget: int = 5000
    proposals_per_expansion: int = 4
    init_sigma_max: int = 8
    init_count: int | None = None  # initial programs drawn (defaults to beam_size)
    max_rollout_steps: int = 64
    sigma_cap: int = 12  # hard size cap emulating a bounded model context
    seed: int = 0
    init_source: str = "random"

    def validate(self):
        if min(self.beam_size, self.expansion_budget, self.proposals_per_expansion) < 1:
            raise ValueError("beam size, budget, and proposal count must be positive")
        if self.beam_size > self.expansion_budget:
            raise ValueError("beam size cannot exceed the expansion budget")


@dataclass
class SearchNode:
    program: Node
    image: np.ndarray
    value: float
    parent: "SearchNode | None"
    depth: int
    expansions_at_creation: int
    seq: int = 0

    def sort_key(self):
        return (self.value, self.depth, self.seq)


@dataclass
class SearchResult:
    best_program: Node | None
    solved: bool
    nodes_expanded: int
    wall_time: float
    trajectory: list[tuple[int, float, str]]  # (expansions, score, program text)
    solved_at: int | None = None
    note: str = ""

    def to_json(self) -> dict:
        """Serializable payload; wall time is reported separately so outputs
        stay byte-identical across reruns."""
        return {
            "best_program": None if self.best_program is None else text_form(self.best_program),
            "solved": self.solved,
            "nodes_expanded": self.nodes_expanded,
            "solved_at": self.solved_at,
            "trajectory": [
                {"expansions": e, "score": round(s, 6), "program": p} for e, s, p in self.trajectory
            ],
            "note": self.note,
        }


class ExpansionCounter:
    """Budget-enforcing render counter: one expansion per rendered program."""

    def __init__(self, env: Environment, budget: int):
        self.env = env
        self.budget = budget
        self.count = 0

    def render(self, tree: Node) -> np.ndarray:
        if self.count >= self.budget:
            raise BudgetExhausted()
        self.count += 1
        return self.env.render(tree)

    def bump(self):
        """Account a non-render expansion (an external init call)."""
        if self.count >= self.budget:
            raise BudgetExhausted()
        self.count += 1


class _BestTracker:
    def __init__(self, env: Environment, target_image):
        self.env = env
        self.target = target_image
        self.best_score = -1.0
        self.best_program: Node | None = None
        self.trajectory: list[tuple[int, float, str]] = []

    def observe(self, program: Node, image, expansions: int) -> bool:
        score = self.env.score(image, self.target)
        if score > self.best_score:
            self.best_score = score
            self.best_program = program
            self.trajectory.append((expansions, score, text_form(program)))
        return self.env.is_solved(image, self.target)


def rollout(
    env: Environment,
    policy,
    z_init: Node,
    target_image: np.ndarray,
    max_steps: int,
    expansion_budget: int = 5000,
    sigma_cap: int = 12,
) -> SearchResult:
    """Greedy denoising: apply the policy's single best proposal repeatedly."""
    counter = ExpansionCounter(env, expansion_budget)
    tracker = _BestTracker(env, target_image)
    started = time.monotonic()
    current = z_init
    note = ""
    solved = False
    solved_at = None
    try:
        image = counter.render(current)
        if tracker.observe(current, image, counter.count):
            solved, solved_at = True, counter.count
        else:
            for _ in range(max_steps):
                try:
                    proposals = policy.propose(
                        current, image, target_image, k=1, render=counter.render
                    )
                except (PolicyError, MutationError) as e:
                    note = f"policy failure: {e}"
                    break
                if not proposals:
                    note = "policy returned no proposals"
                    break
                candidate = apply_mutation(env.grammar, current, proposals[0].as_mutation())
                if candidate.sigma > sigma_cap:
                    note = "proposal breached the size cap"
                    break
                current = candidate
                image = counter.render(current)
                if tracker.observe(current, image, counter.count):
                    solved, solved_at = True, counter.count
                    break
    except BudgetExhausted:
        note = "expansion budget exhausted"
    return SearchResult(
        best_program=tracker.best_program,
        solved=solved,
        nodes_expanded=counter.count,
        wall_time=time.monotonic() - started,
        trajectory=tracker.trajectory,
        solved_at=solved_at,
        note=note,
    )


def init_candidates(
    env: Environment,
    cfg: SearchConfig,
    rng: random.Random,
    counter: ExpansionCounter,
    external=None,
) -> list[tuple[Node, np.ndarray]]:
    """Initial programs: random constrained samples, or whole-program
    proposals from an external endpoint (one extra expansion for the call),
    deduplicated either way."""
    count = cfg.init_count or cfg.beam_size
    programs: list[Node] = []
    if cfg.init_source == "external":
        if external is None:
            log.warning("external init requested without an endpoint; falling back to random")
        else:
            counter.bump()  # the external call itself counts as one expansion
            programs = external.propose_initial(None, count)
            if not programs:
                log.warning("external init returned no usable programs; falling back to random")
    if not programs:
        programs = [
            constrained_sample(env.grammar, env.grammar.start_symbol, 0, cfg.init_sigma_max, rng)
            for _ in range(count)
        ]
    seen: set[tuple[str, ...]] = set()
    out = []
    for p in programs:
        key = serialize(p).tokens
        if key in seen:
            continue
        seen.add(key)
        out.append((p, counter.render(p)))
    return out


def beam_search(
    env: Environment,
    policy,
    value,
    target_image: np.ndarray,
    cfg: SearchConfig,
    external=None,
) -> SearchResult:
    cfg.validate()
    counter = ExpansionCounter(env, cfg.expansion_budget)
    tracker = _BestTracker(env, target_image)
    rng = random.Random(cfg.seed)
    started = time.monotonic()
    seen: set[tuple[str, ...]] = set()
    seq = 0
    note = ""
    solved = False
    solved_at = None

    def finish():
        return SearchResult(
            best_program=tracker.best_program,
            solved=solved,
            nodes_expanded=counter.count,
            wall_time=time.monotonic() - started,
            trajectory=tracker.trajectory,
            solved_at=solved_at,
            note=note,
        )

    try:
        beam: list[SearchNode] = []
        if cfg.init_source == "external" and external is not None:
            external_init = _ExternalInit(external, target_image)
        else:
            external_init = external
        for program, image in init_candidates(env, cfg, rng, counter, external_init):
            seen.add(serialize(program).tokens)
            if tracker.observe(program, image, counter.count):
                solved, solved_at = True, counter.count
                return finish()
            seq += 1
            beam.append(SearchNode(program, image, value.estimate(program, image), None, 0, counter.count, seq))
        beam.sort(key=SearchNode.sort_key)
        beam = beam[: cfg.beam_size]

        while beam and counter.count < cfg.expansion_budget:
            children: list[SearchNode] = []
            for node in beam:
                if node.program == getattr(policy, "target", None):
                    continue  # oracle cannot propose from its own target
                try:
                    proposals = policy.propose(
                        node.program,
                        node.image,
                        target_image,
                        k=cfg.proposals_per_expansion,
                        render=counter.render,
                    )
                except (PolicyError, MutationError) as e:
                    note = f"policy failure: {e}"
                    proposals = []
                for proposal in proposals[: cfg.proposals_per_expansion]:
                    try:
                        candidate = apply_mutation(env.grammar, node.program, proposal.as_mutation())
                    except MutationError:
                        continue
                    if candidate.sigma > cfg.sigma_cap:
                        continue
                    key = serialize(candidate).tokens
                    if key in seen:
                        continue
                    seen.add(key)
                    image = counter.render(candidate)
                    if tracker.observe(candidate, image, counter.count):
                        solved, solved_at = True, counter.count
                        return finish()
                    seq += 1
                    children.append(
                        SearchNode(
                            candidate,
                            image,
                            value.estimate(candidate, image),
                            node,
                            node.depth + 1,
                            counter.count,
                            seq,
                        )
                    )
            if not children:
                note = note or "frontier exhausted"
                break
            children.sort(key=SearchNode.sort_key)
            beam = children[: cfg.beam_size]
    except BudgetExhausted:
        note = "expansion budget exhausted"
    return finish()


class _ExternalInit:
    """Adapter fixing the target image for initial whole-program queries."""

    def __init__(self, external, target_image):
        self.external = external
        self.target_image = target_image

    def propose_initial(self, _target, k):
        return self.external.propose_initial(self.target_image, k)


def solve_hillclimb(
    env: Environment,
    target_image: np.ndarray,
    budget: int,
    seed: int,
    init_count: int = 16,
    init_sigma_max: int = 8,
    hunt_cap: int = 150,
    kicks_per_home: int = 12,
    kick_len: int = 2,
    sigma_small: int = 2,
    sigma_cap: int = 12,
) -> SearchResult:
    """First-improvement hill climbing with basin-hopping kicks and restarts.

    Each attempt seeds from the best of `init_count` random programs, then
    repeatedly applies the first sampled balanced mutation that lowers the
    pixel loss.  A climb with no improvement among `hunt_cap` freshly
    rendered candidates is stuck (pixel losses have compensated local
    optima, e.g. a too-large radius hiding a position error); stuck states
    get kicked with `kick_len` unconditional mutations and re-climbed,
    falling back to a fresh random attempt after `kicks_per_home` futile
    kicks.  Renders are memoized per program, so re-treading old ground
    (which kicks do heavily) costs no budget.
    """
    from .mutation import sample_mutation_balanced

    counter = ExpansionCounter(env, budget)
    tracker = _BestTracker(env, target_image)
    started = time.monotonic()
    g = env.grammar
    memo_img: dict[tuple[str, ...], np.ndarray] = {}
    memo_loss: dict[tuple[str, ...], float] = {}
    solved = False
    solved_at = None
    note = ""

    def probe(tree: Node) -> tuple[np.ndarray, float, bool]:
        key = serialize(tree).tokens
        if key in memo_img:
            return memo_img[key], memo_loss[key], False
        image = counter.render(tree)
        memo_img[key] = image
        memo_loss[key] = env.loss(image, target_image)
        return image, memo_loss[key], True

    def climb(state: Node, loss: float, rng: random.Random):
        nonlocal solved, solved_at
        while True:
            fresh_renders = 0
            spins = 0
            step = None
            tried: set[Node] = set()
            while fresh_renders < hunt_cap and spins < 50 * hunt_cap:
                spins += 1
                m = sample_mutation_balanced(g, state, sigma_small, rng)
                candidate = apply_mutation(g, state, m)
                if candidate.sigma > sigma_cap or candidate in tried:
                    continue
                tried.add(candidate)
                image, cand_loss, fresh = probe(candidate)
                fresh_renders += fresh
                if tracker.observe(candidate, image, counter.count):
                    solved, solved_at = True, counter.count
                    return state, loss
                if cand_loss < loss - 1e-12:
                    step = (candidate, cand_loss)
                    break
            if step is None:
                return state, loss
            state, loss = step

    master = random.Random(seed)
    try:
        while not solved:
            rng = random.Random(master.randrange(2**62))
            home = None
            home_loss = None
            for _ in range(init_count):
                candidate = constrained_sample(g, g.start_symbol, 0, init_sigma_max, rng)
                image, loss, _fresh = probe(candidate)
                if tracker.observe(candidate, image, counter.count):
                    solved, solved_at = True, counter.count
                    break
                if home is None or loss < home_loss:
                    home, home_loss = candidate, loss
            if solved:
                break
            home, home_loss = climb(home, home_loss, rng)
            kicks = 0
            while not solved and kicks < kicks_per_home:
                kicked = home
                for _ in range(kick_len):
                    m = sample_mutation_balanced(g, kicked, sigma_small, rng)
                    moved = apply_mutation(g, kicked, m)
                    if moved.sigma <= sigma_cap:
                        kicked = moved
                image, loss, _fresh = probe(kicked)
                if tracker.observe(kicked, image, counter.count):
                    solved, solved_at = True, counter.count
                    break
                state, loss = climb(kicked, loss, rng)
                if loss < home_loss - 1e-12:
                    home, home_loss = state, loss
                    kicks = 0
                else:
                    kicks += 1
    except BudgetExhausted:
        note = "expansion budget exhausted"
    return SearchResult(
        best_program=tracker.best_program,
        solved=solved,
        nodes_expanded=counter.count,
        wall_time=time.monotonic() - started,
        trajectory=tracker.trajectory,
        solved_at=solved_at,
        note=note,
    )
