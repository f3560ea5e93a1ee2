"""Command-line surface.

Every randomized subcommand demands --seed and is bit-reproducible given
it, at any --jobs value.  Errors print one ``error: <message>`` line on
stderr; exit status 2 flags usage problems, 3 an unsolved instance within
budget, 1 internal failures.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import random
import sys
import time
from pathlib import Path

from . import __version__
from .dataset import load_test_set, gen_dataset, write_test_set
from .envs import ENV_NAMES, load_environment
from .evaluate import aggregate_report, write_report
from .grammar import constrained_sample, parse, pretty, serialize, text_form
from .mutation import apply_mutation, noise_chain
from .policies import HillClimbPolicy, OraclePolicy, OracleValue, PixelValue
from .protocol import ExternalPolicy, ExternalValue, PolicyClient
from .render import load_png, save_png
from .search import SearchConfig, beam_search, solve_hillclimb
from .sketch import sketch_render
from .treepath import full_path


class CliError(Exception):
    pass


def _add_env_args(p: argparse.ArgumentParser):
    p.add_argument("--env", required=True, choices=ENV_NAMES, help="environment name")
    p.add_argument("--grammar", default=None, help="override grammar spec path")


def _seed_arg(p: argparse.ArgumentParser, required=True):
    p.add_argument("--seed", type=int, required=required, help="random seed (mandatory for reproducibility)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treesynth", description="Grammar-generic program synthesis on syntax trees")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", default=None, help="JSON file with flag defaults (flags win)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a random program")
    _add_env_args(p)
    _seed_arg(p)
    p.add_argument("--sigma-max", type=int, default=8, help="max primitive count")
    p.add_argument("--sigma-min", type=int, default=0, help="exclusive min primitive count")

    p = sub.add_parser("mutate", help="apply noising mutations to a program")
    _add_env_args(p)
    _seed_arg(p)
    p.add_argument("--steps", type=int, required=True, help="number of mutation steps")
    p.add_argument("--program", default=None, help="program text (default: sample one)")
    p.add_argument("--sigma-max", type=int, default=8, help="sampled start size bound")
    p.add_argument("--trace", action="store_true", help="print the step-by-step trace")

    p = sub.add_parser("path", help="edit path between two programs as JSON")
    _add_env_args(p)
    _seed_arg(p)
    p.add_argument("--from", dest="source", required=True, help="source program text")
    p.add_argument("--to", dest="target", required=True, help="target program text")

    p = sub.add_parser("render", help="render a program to PNG")
    _add_env_args(p)
    p.add_argument("--program", required=True, help="program text")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--sketch", action="store_true", help="use the sketch observation model")
    _seed_arg(p, required=False)

    p = sub.add_parser("gen-dataset", help="generate a training dataset")
    _add_env_args(p)
    _seed_arg(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rho", type=float, default=0.2, help="random-initialization mixture rate")
    p.add_argument("--s-max", type=int, default=5, help="max noise steps")
    p.add_argument("--sigma-max", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("gen-testset", help="generate a complexity-filtered test set")
    _add_env_args(p)
    _seed_arg(p)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--percentile", type=float, default=95.0)
    p.add_argument("--pool-mult", type=int, default=20)
    p.add_argument("--sigma-max", type=int, default=8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("solve", help="recover a program for a target image")
    _add_env_args(p)
    _seed_arg(p)
    p.add_argument("--target", required=True, help="target image PNG")
    p.add_argument("--policy", required=True, choices=("oracle", "hillclimb", "external"))
    p.add_argument("--truth", default=None, help="ground-truth program (oracle policy)")
    p.add_argument("--endpoint", default=None, help="external policy endpoint (host:port or unix:path)")
    p.add_argument("--beam", type=int, default=64)
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--k", type=int, default=4, help="proposals per expansion")
    p.add_argument("--init", default="random", choices=("random", "external"))
    p.add_argument("--out", required=True, help="result JSON path")
    p.add_argument("--frames", default=None, help="directory for best-so-far PNG frames")

    p = sub.add_parser("eval", help="evaluate a policy on a test set")
    _add_env_args(p)
    _seed_arg(p)
    p.add_argument("--testset", required=True)
    p.add_argument("--policy", required=True, choices=("oracle", "hillclimb", "external"))
    p.add_argument("--endpoint", default=None)
    p.add_argument("--beam", type=int, default=64)
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seeds", type=int, default=5, help="number of evaluation seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="report directory")
    return ap


# -- subcommand implementations ---------------------------------------------------------


def cmd_sample(args) -> int:
    env = load_environment(args.env, args.grammar)
    rng = random.Random(args.seed)
    tree = constrained_sample(env.grammar, env.grammar.start_symbol, args.sigma_min, args.sigma_max, rng)
    print(text_form(tree))
    return 0


def cmd_mutate(args) -> int:
    env = load_environment(args.env, args.grammar)
    rng = random.Random(args.seed)
    if args.program:
        tree = parse(env.grammar, args.program)
    else:
        tree = constrained_sample(env.grammar, env.grammar.start_symbol, 0, args.sigma_max, rng)
    chain = noise_chain(env.grammar, tree, args.steps, seed=rng.randrange(2**32))
    if args.trace:
        for state, mutation in zip(chain.states, chain.mutations):
            text, spans = pretty(state)
            print(text)
            start, end = spans[mutation.target_path]
            print(" " * start + "^" * (end - start) + " --> " + text_form(mutation.replacement))
        print(text_form(chain.states[-1]))
    else:
        print(text_form(chain.states[-1]))
    return 0


def cmd_path(args) -> int:
    env = load_environment(args.env, args.grammar)
    za = parse(env.grammar, args.source)
    zb = parse(env.grammar, args.target)
    path = full_path(env.grammar, za, zb, seed=args.seed)
    steps = []
    cur = za
    for m in path.steps:
        steps.append(
            {
                "target_path": list(m.target_path),
                "pos": serialize(cur).node_spans[m.target_path][0],
                "replacement": list(serialize(m.replacement).tokens),
            }
        )
        cur = apply_mutation(env.grammar, cur, m)
    print(
        json.dumps(
            {
                "source": text_form(za),
                "target": text_form(zb),
                "seed": args.seed,
                "length": len(path.steps),
                "steps": steps,
            },
            indent=2,
        )
    )
    return 0


def cmd_render(args) -> int:
    env = load_environment(args.env, args.grammar)
    tree = parse(env.grammar, args.program)
    if args.sketch:
        if args.env not in ("csg2d", "csg2d-sketch"):
            raise CliError("--sketch applies to the csg2d grammars only")
        if args.seed is None:
            raise CliError("--sketch requires --seed")
        canvas = sketch_render(tree, args.seed)
    else:
        canvas = env.render(tree)
    save_png(canvas, args.out)
    return 0


def cmd_gen_dataset(args) -> int:
    env = load_environment(args.env, args.grammar)
    gen_dataset(
        env,
        args.n,
        args.out,
        seed=args.seed,
        sigma_max=args.sigma_max,
        s_max=args.s_max,
        rho=args.rho,
        jobs=args.jobs,
        grammar_path=args.grammar,
    )
    return 0


def cmd_gen_testset(args) -> int:
    env = load_environment(args.env, args.grammar)
    instances = write_test_set(
        env,
        args.n,
        args.out,
        seed=args.seed,
        pool_multiplier=args.pool_mult,
        percentile=args.percentile,
        sigma_max=args.sigma_max,
    )
    if len(instances) != args.n:
        raise CliError(f"expected {args.n} instances, produced {len(instances)}")
    return 0


def _solve_one(env, args, target_image, truth_tree, seed):
    if args.policy == "oracle":
        if truth_tree is None:
            raise CliError("--policy oracle requires --truth")
        policy = OraclePolicy(env, truth_tree)
        value = OracleValue(env, truth_tree)
        cfg = SearchConfig(
            beam_size=args.beam,
            expansion_budget=args.budget,
            proposals_per_expansion=args.k,
            seed=seed,
            init_source=args.init if hasattr(args, "init") else "random",
        )
        return beam_search(env, policy, value, target_image, cfg)
    if args.policy == "hillclimb":
        return solve_hillclimb(env, target_image, args.budget, seed)
    if args.policy == "external":
        if not args.endpoint:
            raise CliError("--policy external requires --endpoint")
        client = PolicyClient(args.endpoint, env.name)
        policy = ExternalPolicy(env, client)
        value = ExternalValue(env, client, target_image)
        cfg = SearchConfig(
            beam_size=args.beam,
            expansion_budget=args.budget,
            proposals_per_expansion=args.k,
            seed=seed,
            init_source=args.init if hasattr(args, "init") else "random",
        )
        return beam_search(env, policy, value, target_image, cfg, external=policy)
    raise CliError(f"unknown policy {args.policy!r}")


def cmd_solve(args) -> int:
    env = load_environment(args.env, args.grammar)
    target_image = load_png(args.target)
    truth = parse(env.grammar, args.truth) if args.truth else None
    result = _solve_one(env, args, target_image, truth, args.seed)
    payload = result.to_json()
    payload["seed"] = args.seed
    payload["budget"] = args.budget
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    if args.frames:
        frames_dir = Path(args.frames)
        frames_dir.mkdir(parents=True, exist_ok=True)
        for i, (expansions, _score, program) in enumerate(result.trajectory):
            canvas = env.render(parse(env.grammar, program))
            save_png(canvas, frames_dir / f"frame_{i:04d}_exp{expansions:06d}.png")
    print(f"solved={result.solved} nodes_expanded={result.nodes_expanded}", file=sys.stderr)
    print(f"wall_time={result.wall_time:.3f}s", file=sys.stderr)
    return 0 if result.solved else 3


_EVAL_STATE: dict = {}


def _eval_init(env_name, grammar_path, args_dict):
    _EVAL_STATE["env"] = load_environment(env_name, grammar_path)
    _EVAL_STATE["args"] = argparse.Namespace(**args_dict)
    _EVAL_STATE["testset"] = args_dict["testset"]


def _eval_one(task):
    index, tokens, image_ref, seed = task
    env = _EVAL_STATE["env"]
    args = _EVAL_STATE["args"]
    truth = parse(env.grammar, list(tokens))
    target_image = load_png(str(Path(_EVAL_STATE["testset"]) / image_ref))
    result = _solve_one(env, args, target_image, truth, seed)
    return index, seed, result.solved, result.solved_at, result.nodes_expanded


def cmd_eval(args) -> int:
    env = load_environment(args.env, args.grammar)
    instances = load_test_set(args.testset)
    if not instances:
        raise CliError("test set is empty")
    tasks = []
    for s in range(args.seeds):
        seed = args.seed + s
        for i, inst in enumerate(instances):
            tasks.append((i, inst.program_tokens, inst.image_ref, seed))
    args_dict = dict(vars(args))
    if args.jobs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(args.jobs, initializer=_eval_init, initargs=(args.env, args.grammar, args_dict)) as pool:
            rows = pool.map(_eval_one, tasks, chunksize=1)
    else:
        _eval_init(args.env, args.grammar, args_dict)
        rows = [_eval_one(t) for t in tasks]
    from .search import SearchResult

    per_seed: dict[int, list[SearchResult]] = {}
    for index, seed, solved, solved_at, expanded in sorted(rows, key=lambda r: (r[1], r[0])):
        per_seed.setdefault(seed, []).append(
            SearchResult(None, solved, expanded, 0.0, [], solved_at=solved_at)
        )
    report = aggregate_report(
        args.env,
        per_seed,
        args.budget,
        config={
            "policy": args.policy,
            "beam": args.beam,
            "budget": args.budget,
            "k": args.k,
            "seeds": args.seeds,
            "base_seed": args.seed,
        },
    )
    write_report(report, args.out)
    print(f"final solve fraction (mean): {report['mean'][-1]}", file=sys.stderr)
    return 0


_COMMANDS = {
    "sample": cmd_sample,
    "mutate": cmd_mutate,
    "path": cmd_path,
    "render": cmd_render,
    "gen-dataset": cmd_gen_dataset,
    "gen-testset": cmd_gen_testset,
    "solve": cmd_solve,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # config file provides defaults; explicit flags win
    if "--config" in argv:
        idx = argv.index("--config")
        try:
            with open(argv[idx + 1], "r", encoding="utf-8") as f:
                defaults = json.load(f)
        except (OSError, IndexError, json.JSONDecodeError) as e:
            print(f"error: bad --config: {e}", file=sys.stderr)
            return 2
        for action in parser._subparsers._group_actions[0].choices.values():  # type: ignore[union-attr]
            action.set_defaults(**{k: v for k, v in defaults.items()})
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - single reporting point
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
