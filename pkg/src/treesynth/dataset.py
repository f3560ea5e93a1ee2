"""Training-data generation, complexity-filtered test sets, and manifest IO.

Datasets are a directory holding `manifest.ndjson` (one record per line,
image fields as relative paths) and `images/*.png`.  Records mix forward
diffusion (a noise chain of s ~ Uniform[1, s_max] balanced mutations) with
pure random initialization at rate rho; the edit target is always the
first step of the canonical reverse path, and the value target its length.
Each record also stores the plain last-mutation edit so trainers can
ablate reverse-path supervision.

Test sets keep only instances whose raw pixel buffer compresses worst
under LZ4: candidates at or above the given percentile of compressed size,
a proxy for visual complexity.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import random
from dataclasses import dataclass
from pathlib import Path

from .envs import Environment, load_environment
from .grammar import Node, constrained_sample, parse, serialize
from .lz4block import compressed_size
from .mutation import Mutation, noise_chain
from .render import png_bytes, to_uint8
from .treepath import full_path


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class TrainingRecord:
    target_tokens: tuple[str, ...]
    mutated_tokens: tuple[str, ...]
    target_image_ref: str
    mutated_image_ref: str
    edit_pos: int
    replacement_tokens: tuple[str, ...]
    value_target: int
    s: int
    from_random_init: bool
    last_edit_pos: int
    last_replacement_tokens: tuple[str, ...]

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "target_tokens": list(self.target_tokens),
                "mutated_tokens": list(self.mutated_tokens),
                "target_image_ref": self.target_image_ref,
                "mutated_image_ref": self.mutated_image_ref,
                "edit_pos": self.edit_pos,
                "replacement_tokens": list(self.replacement_tokens),
                "value_target": self.value_target,
                "s": self.s,
                "from_random_init": self.from_random_init,
                "last_edit_pos": self.last_edit_pos,
                "last_replacement_tokens": list(self.last_replacement_tokens),
            }
        )

    @classmethod
    def from_json_line(cls, line: str) -> "TrainingRecord":
        d = json.loads(line)
        return cls(
            tuple(d["target_tokens"]),
            tuple(d["mutated_tokens"]),
            d["target_image_ref"],
            d["mutated_image_ref"],
            int(d["edit_pos"]),
            tuple(d["replacement_tokens"]),
            int(d["value_target"]),
            int(d["s"]),
            bool(d["from_random_init"]),
            int(d["last_edit_pos"]),
            tuple(d["last_replacement_tokens"]),
        )


@dataclass(frozen=True)
class TestInstance:
    program_tokens: tuple[str, ...]
    image_ref: str
    compressed_size: int


def record_rng(seed: int, index: int) -> random.Random:
    # String seeding hashes via sha512, so workers agree across processes.
    return random.Random(f"{seed}:{index}")


def gen_training_example(
    env: Environment,
    rng: random.Random,
    sigma_max: int = 8,
    s_max: int = 5,
    rho: float = 0.2,
    sigma_small: int = 2,
) -> tuple[dict, Node, Node, int]:
    """One training example: returns (fields, target_tree, mutated_tree,
    observation_seed); image refs are filled in by the writer."""
    g = env.grammar
    z0 = constrained_sample(g, g.start_symbol, 0, sigma_max, rng)
    obs_seed = rng.randrange(2**32)
    from_random = rng.random() < rho
    last_mutation: Mutation | None = None
    if from_random:
        s = 0
        zm = z0
        while zm == z0:
            zm = constrained_sample(g, g.start_symbol, 0, sigma_max, rng)
    else:
        s = rng.randint(1, s_max)
        while True:
            chain = noise_chain(g, z0, s, sigma_small, seed=rng.randrange(2**32))
            zm = chain.states[-1]
            if zm != z0:
                break
        # Inverting the last chain step restores the pre-mutation subtree.
        last = chain.mutations[-1]
        last_mutation = Mutation(last.target_path, g.node_at(chain.states[-2], last.target_path))
    path = full_path(g, zm, z0, sigma_small, seed=0)
    first = path.steps[0]
    if last_mutation is None:
        last_mutation = first
    mutated_seq = serialize(zm)
    fields = {
        "target_tokens": serialize(z0).tokens,
        "mutated_tokens": mutated_seq.tokens,
        "edit_pos": mutated_seq.node_spans[first.target_path][0],
        "replacement_tokens": serialize(first.replacement).tokens,
        "value_target": len(path.steps),
        "s": s,
        "from_random_init": from_random,
        "last_edit_pos": mutated_seq.node_spans[last_mutation.target_path][0],
        "last_replacement_tokens": serialize(last_mutation.replacement).tokens,
    }
    return fields, z0, zm, obs_seed


_worker_env: Environment | None = None


def _init_worker(env_name: str, grammar_path):
    global _worker_env
    _worker_env = load_environment(env_name, grammar_path)


def _build_record(args) -> tuple[int, dict, bytes, bytes]:
    index, seed, sigma_max, s_max, rho, sigma_small = args
    env = _worker_env
    rng = record_rng(seed, index)
    fields, z0, zm, obs_seed = gen_training_example(env, rng, sigma_max, s_max, rho, sigma_small)
    target_png = png_bytes(env.observe(z0, obs_seed))
    mutated_png = png_bytes(env.render(zm))
    return index, fields, target_png, mutated_png


def gen_dataset(
    env: Environment,
    n: int,
    out_dir,
    seed: int,
    sigma_max: int = 8,
    s_max: int = 5,
    rho: float = 0.2,
    sigma_small: int = 2,
    jobs: int = 1,
    grammar_path=None,
) -> list[TrainingRecord]:
    """Write manifest.ndjson + images/; byte-identical for any jobs value."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    work = [(i, seed, sigma_max, s_max, rho, sigma_small) for i in range(n)]
    if jobs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(env.name, grammar_path)) as pool:
            results = pool.map(_build_record, work, chunksize=max(1, n // (jobs * 8)))
        results.sort(key=lambda r: r[0])
    else:
        _init_worker(env.name, grammar_path)
        results = [_build_record(w) for w in work]
    records = []
    with open(out / "manifest.ndjson", "w", encoding="utf-8") as manifest:
        for index, fields, target_png, mutated_png in results:
            target_ref = f"images/{index:06d}_target.png"
            mutated_ref = f"images/{index:06d}_mutated.png"
            (out / target_ref).write_bytes(target_png)
            (out / mutated_ref).write_bytes(mutated_png)
            record = TrainingRecord(
                target_image_ref=target_ref, mutated_image_ref=mutated_ref, **fields
            )
            manifest.write(record.to_json_line() + "\n")
            records.append(record)
    return records


def load_manifest(dataset_dir) -> list[TrainingRecord]:
    path = Path(dataset_dir) / "manifest.ndjson"
    with open(path, "r", encoding="utf-8") as f:
        return [TrainingRecord.from_json_line(line) for line in f if line.strip()]


def verify_record(env: Environment, record: TrainingRecord, dataset_dir) -> None:
    """Replay a record: the edit must be the first step of the canonical
    path, the value target its length, and the mutated image must
    re-render byte-for-byte (clean-render environments)."""
    g = env.grammar
    z0 = parse(g, list(record.target_tokens))
    zm = parse(g, list(record.mutated_tokens))
    path = full_path(g, zm, z0, seed=0)
    first = path.steps[0]
    seq = serialize(zm)
    if seq.node_spans[first.target_path][0] != record.edit_pos:
        raise DatasetError("edit_pos does not match the canonical first step")
    if serialize(first.replacement).tokens != record.replacement_tokens:
        raise DatasetError("replacement_tokens do not match the canonical first step")
    if len(path.steps) != record.value_target:
        raise DatasetError("value_target does not match the canonical path length")
    stored = (Path(dataset_dir) / record.mutated_image_ref).read_bytes()
    if png_bytes(env.render(zm)) != stored:
        raise DatasetError("mutated image does not re-render byte-for-byte")


# -- complexity-filtered test sets --------------------------------------------------------


def gen_test_set(
    env: Environment,
    n: int,
    rng: random.Random,
    pool_multiplier: int = 20,
    percentile: float = 95.0,
    sigma_max: int = 8,
) -> list[tuple[Node, "object", int]]:
    """Sample a pool, rank by LZ4-compressed raw-pixel size, and keep n
    instances from the top (100 - percentile) percent."""
    if pool_multiplier < 20:
        raise DatasetError("pool must be at least 20x the requested size")
    pool_n = n * pool_multiplier
    g = env.grammar
    entries = []
    for i in range(pool_n):
        tree = constrained_sample(g, g.start_symbol, 0, sigma_max, rng)
        canvas = env.render(tree)
        size = compressed_size(to_uint8(canvas).tobytes())
        entries.append((size, i, tree, canvas))
    eligible_count = math.ceil((1.0 - percentile / 100.0) * pool_n)
    ranked = sorted(entries, key=lambda e: (-e[0], e[1]))
    eligible = ranked[:eligible_count]
    if len(eligible) < n:
        raise DatasetError(
            f"only {len(eligible)} instances at or above the {percentile}th percentile; "
            f"increase pool_multiplier"
        )
    return [(tree, canvas, size) for size, _i, tree, canvas in eligible[:n]]


def write_test_set(
    env: Environment,
    n: int,
    out_dir,
    seed: int,
    pool_multiplier: int = 20,
    percentile: float = 95.0,
    sigma_max: int = 8,
) -> list[TestInstance]:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    chosen = gen_test_set(env, n, rng, pool_multiplier, percentile, sigma_max)
    instances = []
    with open(out / "manifest.ndjson", "w", encoding="utf-8") as manifest:
        for i, (tree, canvas, size) in enumerate(chosen):
            ref = f"images/{i:06d}.png"
            if env.name == "csg2d-sketch":
                canvas = env.observe(tree, seed=record_rng(seed, i).randrange(2**32))
            (out / ref).write_bytes(png_bytes(canvas))
            inst = TestInstance(serialize(tree).tokens, ref, size)
            manifest.write(
                json.dumps(
                    {
                        "program_tokens": list(inst.program_tokens),
                        "image_ref": inst.image_ref,
                        "compressed_size": inst.compressed_size,
                    }
                )
                + "\n"
            )
            instances.append(inst)
    return instances


def load_test_set(testset_dir) -> list[TestInstance]:
    path = Path(testset_dir) / "manifest.ndjson"
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            out.append(
                TestInstance(tuple(d["program_tokens"]), d["image_ref"], int(d["compressed_size"]))
            )
    return out
