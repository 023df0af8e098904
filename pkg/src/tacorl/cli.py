"""Command line entry point: collect, train, evaluate and inspect.

Layout under ``run_dir``::

    seed_<s>/data/           play dataset
    seed_<s>/lmp/            latent-plan model (+ plan cache)
    seed_<s>/<hrl.name>/     high-level actor
    seed_<s>/cql-her/        flat baseline
    eval/<method>-<protocol>/report.csv, summary.json

Exit codes: 0 ok, 1 runtime error (missing artifact), 2 usage, 3 config, 4 divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, rngs, scripted
from ._backend import BACKEND
from .baselines import FlatController, lmp_inference_policy, train_flat_cql
from .baselines import PlanPolicy
from .bundle import BundleError, load_flat_policy, load_hrl_actor, load_lmp, save_actor, save_lmp
from .config import Config, ConfigError, load_config
from .datastore import Dataset, DatasetError, read_dataset, write_dataset
from .evalharness import (
    HARD_TASKS,
    emit_report,
    make_chains,
    make_hard_goal,
    make_two_task_goal,
    run_chains,
    run_hard,
    run_single_goal_multi_task,
)
from .hrl import CqlHyperParams, GoalSamplerConfig, PlanCache, train_hrl
from .lmp import LmpHyperParams, TrainingDiverged, train_lmp
from .numcore.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger("tacorl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3, 4
METHODS = ("taco", "lmp", "cql-her")
PROTOCOLS = ("chain5", "single-goal-2task", "hard")


class MissingArtifact(RuntimeError):
    pass


# --------------------------------------------------------------- helpers
def seed_dir(cfg: Config, seed: int) -> Path:
    return cfg.run_dir / f"seed_{seed}"


def file_id(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_manifest(out_dir: Path, command: str, cfg: Config, seeds, lineage: dict, extra=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    man = {
        "command": command,
        "config_hash": cfg.hash(),
        "config": dict(sorted(cfg.values.items())),
        "seeds": list(seeds),
        "lineage": lineage,
        "version": __version__,
        "backend": BACKEND,
    }
    if extra:
        man.update(extra)
    (out_dir / "run.json").write_text(json.dumps(man, indent=2, sort_keys=True))


def load_data(path: Path) -> Dataset:
    if not (path / "manifest.json").exists():
        raise MissingArtifact(f"dataset not found: {path}")
    episodes, _ = read_dataset(path)
    return Dataset(episodes)


def lmp_params(cfg: Config) -> LmpHyperParams:
    sec = cfg.section("lmp")
    sec.pop("epochs")
    return LmpHyperParams(**sec)


def cql_params(cfg: Config, prefix: str) -> CqlHyperParams:
    sec = cfg.section(prefix)
    keep = {k: v for k, v in sec.items() if k in CqlHyperParams.__dataclass_fields__}
    if prefix == "flat":
        # critic topology and backup settings are shared with the high-level learner
        for k in ("gamma", "tau", "cql_alpha", "n_ood", "critic_width"):
            keep[k] = cfg[f"hrl.{k}"]
    return CqlHyperParams(**keep)


def goal_params(cfg: Config) -> GoalSamplerConfig:
    return GoalSamplerConfig(**cfg.section("goal"))


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


# --------------------------------------------------------------- commands
def cmd_collect(cfg: Config, args) -> None:
    for seed in cfg.seeds:
        out = seed_dir(cfg, seed) / "data"
        rng = rngs.stream(seed, "collect")
        segments: list = []
        eps = scripted.scripted_collect(rng, cfg["collect.episodes"], cfg["collect.steps_per_episode"], segments)
        write_dataset(eps, out, collector_seed=seed, overwrite=True)
        with open(out / "segments.txt", "w") as fh:
            fh.writelines(f"{e},{a},{b},{name}\n" for e, a, b, name in segments)
        write_manifest(out, "collect", cfg, [seed], {})
        log.info("seed %d: wrote %d episodes to %s", seed, len(eps), out)


def cmd_train_lmp(cfg: Config, args) -> None:
    for seed in cfg.seeds:
        sd = seed_dir(cfg, seed)
        ds = load_data(sd / "data")
        out = sd / "lmp"
        model = train_lmp(ds, lmp_params(cfg), seed, cfg["lmp.epochs"], out_dir=out, resume=args.resume)
        save_lmp(out, model)
        cache_file = out / "plan_cache.taco"
        if cache_file.exists():
            cache_file.unlink()
        write_manifest(out, "train-lmp", cfg, [seed], {"data": file_id(sd / "data" / "manifest.json")},
                       {"model_id": file_id(out / "model.taco")})


def get_plan_cache(sd: Path, model, ds: Dataset, k: int) -> PlanCache:
    path = sd / "lmp" / "plan_cache.taco"
    if path.exists():
        arr = load_checkpoint(path)
        cache = PlanCache.__new__(PlanCache)
        cache.k = k
        cache.starts = arr["starts"].astype(np.int64)
        cache.mean = arr["mean"]
        cache.log_std = arr["log_std"]
        return cache
    cache = PlanCache(model, ds, k)
    save_checkpoint(path, {"starts": cache.starts.astype(np.float64), "mean": cache.mean, "log_std": cache.log_std})
    return cache


def cmd_train_hrl(cfg: Config, args) -> None:
    for seed in cfg.seeds:
        sd = seed_dir(cfg, seed)
        ds = load_data(sd / "data")
        model = load_lmp(_need(sd / "lmp", "latent-plan model"))
        gcfg = goal_params(cfg)
        cache = get_plan_cache(sd, model, ds, gcfg.k)
        out = sd / cfg["hrl.name"]
        hp = cql_params(cfg, "hrl")
        learner = train_hrl(ds, model, hp, gcfg, seed, cfg["hrl.epochs"], out_dir=out, cache=cache)
        save_actor(out, learner.actor, "hrl", hp, {"goal": asdict(gcfg)})
        write_manifest(out, "train-hrl", cfg, [seed], {"data": file_id(sd / "data" / "manifest.json"),
                                                        "lmp": file_id(sd / "lmp" / "model.taco")},
                       {"model_id": file_id(out / "model.taco")})


def cmd_train_baseline(cfg: Config, args) -> None:
    for seed in cfg.seeds:
        sd = seed_dir(cfg, seed)
        if args.method == "lmp":
            # the imitation baseline is the trained latent-plan model run from its prior
            _need(sd / "lmp" / "model.taco", "latent-plan model (run train-lmp first)")
            write_manifest(sd / "lmp-baseline", "train-baseline lmp", cfg, [seed],
                           {"lmp": file_id(sd / "lmp" / "model.taco")})
            continue
        ds = load_data(sd / "data")
        out = sd / "cql-her"
        hp = cql_params(cfg, "flat")
        learner = train_flat_cql(ds, hp, goal_params(cfg), seed, cfg["flat.epochs"], out_dir=out)
        save_actor(out, learner.actor, "cql-her", hp)
        write_manifest(out, "train-baseline cql-her", cfg, [seed], {"data": file_id(sd / "data" / "manifest.json")},
                       {"model_id": file_id(out / "model.taco")})


def make_policy(cfg: Config, method: str, seed: int):
    sd = seed_dir(cfg, seed)
    replan = cfg["eval.replan"]
    if method == "cql-her":
        return FlatController(load_flat_policy(_need(sd / "cql-her", "flat baseline")))
    model = load_lmp(_need(sd / "lmp", "latent-plan model"))
    if method == "lmp":
        sample = cfg["eval.lmp_plan"] == "sample"
        return lmp_inference_policy(model, rngs.stream(seed, "eval", "lmp-plan"), sample=sample, replan=replan)
    actor = load_hrl_actor(_need(sd / cfg["hrl.name"], "high-level actor"), model)
    return PlanPolicy(model, actor.greedy, replan)


def evaluate(cfg: Config, method: str, protocol: str, seed: int) -> dict:
    policy = make_policy(cfg, method, seed)
    rng = rngs.stream(seed, "eval", protocol)
    if protocol == "chain5":
        specs = make_chains(rng, cfg["eval.n_chains"], cfg["eval.chain_length"], cfg["eval.chain_budget"])
        out = run_chains(policy, specs)
    elif protocol == "single-goal-2task":
        specs = [make_two_task_goal(rng, cfg["eval.two_task_budget"]) for _ in range(cfg["eval.two_task_rollouts"])]
        out = run_single_goal_multi_task(policy, specs)
    else:
        specs = [make_hard_goal(rng, task, cfg["eval.hard_budget"])
                 for task in HARD_TASKS for _ in range(cfg["eval.hard_rollouts"])]
        out = run_hard(policy, specs)
    out["seed"] = seed
    return out


def eval_dir(cfg: Config, method: str, protocol: str) -> Path:
    name = method if method != "taco" or cfg["hrl.name"] == "hrl" else f"taco-{cfg['hrl.name']}"
    return cfg.run_dir / "eval" / f"{name}-{protocol}"


def cmd_eval(cfg: Config, args) -> dict:
    outcomes = [evaluate(cfg, args.method, args.protocol, seed) for seed in cfg.seeds]
    out = eval_dir(cfg, args.method, args.protocol)
    summary = emit_report(outcomes, out, args.method)
    upstream = {"lmp": "lmp", "taco": cfg["hrl.name"], "cql-her": "cql-her"}[args.method]
    lineage = {f"seed_{s}/{upstream}": file_id(seed_dir(cfg, s) / upstream / "model.taco") for s in cfg.seeds}
    if args.method == "taco":
        lineage.update({f"seed_{s}/lmp": file_id(seed_dir(cfg, s) / "lmp" / "model.taco") for s in cfg.seeds})
    write_manifest(out, f"eval --method {args.method} --protocol {args.protocol}", cfg, cfg.seeds, lineage)
    print(json.dumps(summary, sort_keys=True))
    return summary


def inspect_dataset(path: Path) -> dict:
    episodes, manifest = read_dataset(path)
    obs = np.concatenate([e.observations for e in episodes])
    names = ("x", "y", "gripper", "block_x", "block_y", "held", "drawer", "slider", "light")
    return {
        "episodes": len(episodes),
        "total_steps": int(sum(e.length for e in episodes)),
        "collector_seed": manifest.get("collector_seed"),
        "obs_mean": {n: round(float(v), 4) for n, v in zip(names, obs.mean(axis=0))},
        "obs_min": {n: round(float(v), 4) for n, v in zip(names, obs.min(axis=0))},
        "obs_max": {n: round(float(v), 4) for n, v in zip(names, obs.max(axis=0))},
    }


def cmd_inspect(cfg: Config, args) -> None:
    paths = [Path(args.data)] if args.data else [seed_dir(cfg, s) / "data" for s in cfg.seeds]
    for p in paths:
        if not (p / "manifest.json").exists():
            raise MissingArtifact(f"dataset not found: {p}")
        print(json.dumps({"path": str(p), **inspect_dataset(p)}, indent=2))


# ------------------------------------------------------------------ main
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="tacorl", description="Latent-plan offline RL on a desk-scale play table.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="scripted play collection")
    t = sub.add_parser("train-lmp", parents=[common], help="train encoder, prior and decoder")
    t.add_argument("--resume", action="store_true", help="continue from the newest epoch checkpoint")
    sub.add_parser("train-hrl", parents=[common], help="train the high-level actor with CQL")
    b = sub.add_parser("train-baseline", parents=[common], help="train a baseline")
    b.add_argument("method", choices=("lmp", "cql-her"))
    e = sub.add_parser("eval", parents=[common], help="evaluate a method on a protocol")
    e.add_argument("--method", choices=METHODS, required=True)
    e.add_argument("--protocol", choices=PROTOCOLS, required=True)
    i = sub.add_parser("inspect", parents=[common], help="dataset statistics")
    i.add_argument("--data", help="dataset directory (default: each seed's data)")
    return p


COMMANDS = {
    "collect": cmd_collect,
    "train-lmp": cmd_train_lmp,
    "train-hrl": cmd_train_hrl,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MissingArtifact, BundleError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
