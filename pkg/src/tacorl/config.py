"""Flat ``key = value`` run configuration.

Unknown keys are rejected by name. Values take the type of their default.
``TACO_SEED`` in the environment overrides ``seed``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

# key: (default, note). Keys marked scaled differ from the published setting.
DEFAULTS: dict[str, tuple] = {
    "seeds": ("0", "comma-separated pipeline seeds"),
    "run_dir": ("runs/default", "artifact root"),
    # collection
    "collect.episodes": (200, ""),
    "collect.steps_per_episode": (1000, ""),
    # latent-plan model
    "lmp.beta": (0.1, "scaled"),
    "lmp.kl_alpha": (0.8, ""),
    "lmp.batch_size": (64, ""),
    "lmp.lr": (1e-3, "scaled"),
    "lmp.latent_dim": (16, ""),
    "lmp.embed_dim": (32, ""),
    "lmp.enc_width": (64, "scaled"),
    "lmp.enc_heads": (2, "scaled"),
    "lmp.enc_blocks": (2, ""),
    "lmp.enc_ff": (128, "scaled"),
    "lmp.prior_width": (64, "scaled"),
    "lmp.prior_layers": (3, ""),
    "lmp.dec_hidden": (64, "scaled"),
    "lmp.dec_layers": (2, ""),
    "lmp.epochs": (8, "scaled"),
    "lmp.steps_per_epoch": (250, "scaled"),
    # goal relabeling
    "goal.p": (0.3, ""),
    "goal.k": (16, ""),
    "goal.positive_fraction": (0.9, ""),
    # high-level CQL
    "hrl.name": ("hrl", "output directory name under each seed"),
    "hrl.critic_lr": (3e-4, ""),
    "hrl.actor_lr": (1e-4, ""),
    "hrl.alpha_lr": (1e-3, ""),
    "hrl.gamma": (0.95, ""),
    "hrl.tau": (0.005, ""),
    "hrl.cql_alpha": (1.0, ""),
    "hrl.n_ood": (4, ""),
    "hrl.batch_size": (64, ""),
    "hrl.bc_warmstart_epochs": (5, ""),
    "hrl.epochs": (10, "scaled"),
    "hrl.steps_per_epoch": (200, "scaled"),
    "hrl.target_entropy": (-16.0, ""),
    "hrl.init_entropy_coef": (0.01, ""),
    "hrl.critic_width": (64, "scaled"),
    # flat CQL+HER
    "flat.critic_lr": (3e-4, ""),
    "flat.actor_lr": (1e-4, ""),
    "flat.alpha_lr": (1e-3, ""),
    "flat.batch_size": (64, ""),
    "flat.bc_warmstart_epochs": (5, ""),
    "flat.epochs": (20, "scaled"),
    "flat.steps_per_epoch": (200, "scaled"),
    "flat.target_entropy": (-3.0, ""),
    "flat.init_entropy_coef": (0.01, ""),
    # evaluation
    "eval.n_chains": (100, "scaled"),
    "eval.chain_length": (5, ""),
    "eval.chain_budget": (90, "scaled"),
    "eval.two_task_rollouts": (200, "scaled"),
    "eval.two_task_budget": (150, "scaled"),
    "eval.hard_rollouts": (50, "per task"),
    "eval.hard_budget": (90, "scaled"),
    "eval.replan": (15, ""),
    "eval.lmp_plan": ("sample", "sample | mean"),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str):
    default = DEFAULTS[key][0]
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_lines(lines, source: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{n}: expected key = value, got {line.strip()!r}")
        key, raw = (s.strip() for s in text.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{n}: unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


@dataclass
class Config:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seeds(self) -> list[int]:
        try:
            return [int(s) for s in str(self.values["seeds"]).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"seeds must be comma-separated integers, got {self.values['seeds']!r}") from None

    @property
    def run_dir(self) -> Path:
        return Path(self.values["run_dir"])

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def canonical(self) -> str:
        return "".join(f"{k}={self.values[k]!r}\n" for k in sorted(self.values))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def load_config(path=None, overrides=(), env=None) -> Config:
    """Defaults, then the file, then ``key=value`` overrides, then TACO_SEED."""
    env = os.environ if env is None else env
    values = {k: v[0] for k, v in DEFAULTS.items()}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_lines(p.read_text().splitlines(), str(p)))
    values.update(parse_lines(overrides, "--set"))
    if env.get("TACO_SEED"):
        values["seeds"] = env["TACO_SEED"]
    cfg = Config(values)
    cfg.seeds  # validate
    return cfg


def default_config_text() -> str:
    lines = []
    for k, (v, note) in DEFAULTS.items():
        lines.append(f"{k} = {v}" + (f"  # {note}" if note else ""))
    return "\n".join(lines) + "\n"
