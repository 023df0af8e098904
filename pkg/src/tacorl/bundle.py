"""Trained-model persistence: a checkpoint file plus a JSON description per model directory."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import FlatPolicy
from .hrl import CqlHyperParams, LatentActor
from .lmp import LatentPlanModel, LmpHyperParams
from .networks import FlatActor, PlanPrior
from .numcore.checkpoint import load_checkpoint, save_checkpoint

MODEL_FILE = "model.taco"
META_FILE = "model.json"


class BundleError(FileNotFoundError):
    pass


def _write(out_dir, kind: str, arrays: dict, meta: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / MODEL_FILE, arrays)
    (out / META_FILE).write_text(json.dumps({"kind": kind, **meta}, indent=2, sort_keys=True))


def _read(model_dir, kind: str):
    d = Path(model_dir)
    if not (d / MODEL_FILE).exists():
        raise BundleError(f"no trained model at {d / MODEL_FILE}")
    meta = json.loads((d / META_FILE).read_text())
    if meta["kind"] != kind:
        raise BundleError(f"{d}: expected a {kind} model, found {meta['kind']}")
    return load_checkpoint(d / MODEL_FILE), meta


def _sub(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def save_lmp(out_dir, model: LatentPlanModel) -> None:
    _write(out_dir, "lmp", model.state_dict(), {"hp": asdict(model.hp)})


def load_lmp(model_dir) -> LatentPlanModel:
    arrays, meta = _read(model_dir, "lmp")
    model = LatentPlanModel(LmpHyperParams(**meta["hp"]), np.random.default_rng(0))
    model.load_state_dict(arrays)
    return model


def save_actor(out_dir, actor, kind: str, hp: CqlHyperParams, extra: dict | None = None) -> None:
    arrays = {f"actor.{k}": v for k, v in actor.net.state_dict().items()}
    _write(out_dir, kind, arrays, {"hp": asdict(hp), **(extra or {})})


def load_hrl_actor(model_dir, lmp: LatentPlanModel) -> LatentActor:
    arrays, _ = _read(model_dir, "hrl")
    hp = lmp.hp
    net = PlanPrior(np.random.default_rng(0), hp.latent_dim, hp.embed_dim, hp.prior_width, hp.prior_layers)
    net.load_state_dict(_sub(arrays, "actor."))
    return LatentActor(net)


def load_flat_policy(model_dir) -> FlatPolicy:
    arrays, _ = _read(model_dir, "cql-her")
    net = FlatActor(np.random.default_rng(0))
    net.load_state_dict(_sub(arrays, "actor."))
    return FlatPolicy(net)
