"""End-to-end comparison: every method, every protocol, several seeds, through the CLI."""
from __future__ import annotations

import json
import time
from pathlib import Path

from .cli import run

NO_NEG = ("--set", "hrl.name=hrl_noneg", "--set", "goal.positive_fraction=1.0")


def _call(args: list[str], timings: dict, label: str) -> None:
    t0 = time.perf_counter()
    code = run(args)
    timings[label] = round(time.perf_counter() - t0, 1)
    if code != 0:
        raise RuntimeError(f"tacorl {' '.join(args)} exited with {code}")


def run_comparison(config: str | None, run_dir: str, seeds: str = "0,1,2", extra: tuple = (),
                   ablation: bool = True) -> dict:
    """Collect, train all methods, evaluate them; returns summaries keyed by (method, protocol)."""
    base = (["--config", config] if config else []) + ["--set", f"run_dir={run_dir}", "--set", f"seeds={seeds}"]
    base += list(extra)
    timings: dict[str, float] = {}
    _call(["collect", *base], timings, "collect")
    _call(["train-lmp", *base], timings, "train-lmp")
    _call(["train-hrl", *base], timings, "train-hrl")
    if ablation:
        _call(["train-hrl", *base, *NO_NEG], timings, "train-hrl-noneg")
    _call(["train-baseline", "lmp", *base], timings, "train-baseline-lmp")
    _call(["train-baseline", "cql-her", *base], timings, "train-baseline-cql-her")
    results = {}
    evals = [(m, p) for m in ("taco", "lmp", "cql-her") for p in ("chain5", "single-goal-2task")]
    evals += [("taco", "hard")]
    for method, protocol in evals:
        _call(["eval", "--method", method, "--protocol", protocol, *base], timings, f"eval-{method}-{protocol}")
        results[f"{method}/{protocol}"] = _summary(run_dir, method, protocol)
    if ablation:
        _call(["eval", "--method", "taco", "--protocol", "hard", *base, *NO_NEG], timings, "eval-taco-noneg-hard")
        results["taco-noneg/hard"] = _summary(run_dir, "taco-hrl_noneg", "hard")
    results["timings"] = timings
    Path(run_dir, "comparison.json").write_text(json.dumps(results, indent=2, sort_keys=True))
    return results


def _summary(run_dir: str, name: str, protocol: str) -> dict:
    return json.loads(Path(run_dir, "eval", f"{name}-{protocol}", "summary.json").read_text())
