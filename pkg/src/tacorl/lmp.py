"""Latent-plan model: window encoder, goal-conditioned prior and recurrent action decoder.

Trained with the beta-weighted ELBO; the KL term uses balanced gradients so
the prior moves faster than the encoder.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rngs
from .datastore import MAX_WINDOW, Dataset, sample_window, stack_windows
from .networks import PlanDecoder, PlanEncoder, PlanPrior, normalize_actions
from .numcore import tensor as T
from .numcore.checkpoint import load_checkpoint, save_checkpoint
from .numcore.distributions import (
    BinSpec,
    GaussianParams,
    gaussian_sample_tanh,
    kl_balanced,
    logistic_mixture_logprob,
    logistic_mixture_mode,
    logistic_mixture_sample,
)
from .numcore.optim import Adam
from .numcore.tensor import Tensor
from .playtable import MAX_DELTA

log = logging.getLogger(__name__)

LMP_LOG_COLUMNS = ("step", "nll", "kl", "total", "grad_norm")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LmpHyperParams:
    beta: float = 1e-3
    kl_alpha: float = 0.8
    batch_size: int = 64
    lr: float = 1e-4
    window: int = MAX_WINDOW
    latent_dim: int = 16
    embed_dim: int = 32
    enc_width: int = 64
    enc_heads: int = 2
    enc_blocks: int = 2
    enc_ff: int = 128
    prior_width: int = 64
    prior_layers: int = 3
    dec_hidden: int = 128
    dec_layers: int = 2
    n_bins: int = 256
    steps_per_epoch: int = 500

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0.0 < self.kl_alpha < 1.0:
            raise ValueError(f"kl_alpha must lie in (0, 1), got {self.kl_alpha}")


class LatentPlanModel:
    """Encoder, prior and decoder trained together."""

    def __init__(self, hp: LmpHyperParams, rng: np.random.Generator):
        self.hp = hp
        self.encoder = PlanEncoder(rng, hp.latent_dim, hp.embed_dim, hp.enc_width, hp.enc_heads,
                                   hp.enc_blocks, hp.enc_ff, hp.window)
        self.prior = PlanPrior(rng, hp.latent_dim, hp.embed_dim, hp.prior_width, hp.prior_layers)
        self.decoder = PlanDecoder(rng, hp.latent_dim, hp.embed_dim, hp.dec_hidden, hp.dec_layers)
        self.bins = BinSpec(hp.n_bins)
        self.plan_samples = 0  # instrumentation: one increment per window

    def named_parameters(self):
        for name in ("encoder", "prior", "decoder"):
            yield from getattr(self, name).named_parameters(name + ".")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name in ("encoder", "prior", "decoder"):
            pre = name + "."
            getattr(self, name).load_state_dict({k[len(pre):]: v for k, v in state.items() if k.startswith(pre)})


# ----------------------------------------------------------------- ops
def encode(model: LatentPlanModel, obs, actions, mask) -> GaussianParams:
    """Plan posterior for padded windows (B, 16, .) with mask (B, 16)."""
    return model.encoder(obs, normalize_actions(actions), mask)


def prior_plan(model: LatentPlanModel, s_c, s_g) -> GaussianParams:
    return model.prior(s_c, s_g)


def decode_action(model: LatentPlanModel, s_t, z, hidden=None, greedy: bool = True,
                  rng: np.random.Generator | None = None):
    """One decoder step for a batch. Returns (env actions (B, 3), hidden').

    ``hidden=None`` starts a fresh plan.
    """
    s_t = np.atleast_2d(np.asarray(s_t, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64))
    with T.no_grad():
        if hidden is None:
            hidden = model.decoder.initial_state(len(s_t))
        mix, grip, hidden = model.decoder.step(s_t, z, hidden)
        if greedy:
            cont = logistic_mixture_mode(mix, model.bins)
            g = np.where(grip.data > 0, 1.0, -1.0)
        else:
            if rng is None:
                raise ValueError("stochastic decoding needs an rng")
            cont = logistic_mixture_sample(mix, model.bins, rng)
            p = 1.0 / (1.0 + np.exp(-grip.data))
            g = np.where(rng.random(p.shape) < p, 1.0, -1.0)
    act = np.concatenate([cont * MAX_DELTA, g[:, None]], axis=1)
    return act, hidden


def action_targets(actions: np.ndarray):
    """Normalized motion targets (B, n, 2) and binary gripper targets (B, n)."""
    a = normalize_actions(actions)
    return a[..., :2], (a[..., 2] > 0).astype(np.float64)


def lmp_loss(model: LatentPlanModel, obs, actions, mask, rng: np.random.Generator, beta: float | None = None,
             alpha: float | None = None, eps: np.ndarray | None = None):
    """Negative ELBO for a batch of padded windows.

    Returns ``(total, parts)``; parts holds the scalar components and the
    intermediates needed to recompute them.
    """
    beta = model.hp.beta if beta is None else beta
    alpha = model.hp.kl_alpha if alpha is None else alpha
    mask = np.asarray(mask, dtype=bool)
    q = encode(model, obs, actions, mask)
    last = mask.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)
    p = prior_plan(model, obs[:, 0], obs[np.arange(len(obs)), last])
    # one plan per window, shared by every decode step
    if eps is None:
        eps = rng.standard_normal(q.mean.shape)
    z, _, u = gaussian_sample_tanh(q, rng, eps)
    model.plan_samples += obs.shape[0]
    mix, grip = model.decoder(obs, z)
    cont_t, grip_t = action_targets(actions)
    lp_cont = logistic_mixture_logprob(mix, cont_t, model.bins)
    lp_grip = grip_t * T.log_sigmoid(grip) + (1.0 - grip_t) * T.log_sigmoid(-1.0 * grip)
    m = mask.astype(np.float64)
    nll = -1.0 * ((lp_cont + lp_grip) * m).sum(axis=1).mean()
    kl = kl_balanced(q, p, alpha).mean()
    total = nll + beta * kl
    if not np.isfinite(total.data):
        raise FloatingPointError("non-finite latent-plan loss")
    parts = {
        "nll": float(nll.data), "kl": float(kl.data), "total": float(total.data),
        "eps": eps, "z": z.data, "u": u.data, "q": q, "p": p, "lp_cont": lp_cont.data,
        "lp_grip": lp_grip.data,
    }
    return total, parts


# ------------------------------------------------------------- training
def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, rows: list, header, append: bool) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(header)
        w.writerows(rows)


def save_training_state(ckpt_dir: Path, epoch: int, params: dict, opt_arrays: dict, meta: dict) -> Path:
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    arrays = dict(params)
    arrays.update(opt_arrays)
    path = ckpt_dir / f"epoch_{epoch:04d}.taco"
    save_checkpoint(path, arrays)
    tmp = ckpt_dir / f".epoch_{epoch:04d}.json.tmp"
    tmp.write_text(json.dumps(meta, default=int))
    tmp.replace(ckpt_dir / f"epoch_{epoch:04d}.json")
    return path


def latest_epoch(ckpt_dir: Path) -> int | None:
    found = sorted(Path(ckpt_dir).glob("epoch_*.json")) if Path(ckpt_dir).exists() else []
    return int(found[-1].stem.split("_")[1]) if found else None


class DivergenceGuard:
    """Trips when the epoch loss exceeds ``factor`` x the initial loss ``patience`` epochs in a row."""

    def __init__(self, factor: float = 10.0, patience: int = 3):
        self.factor = factor
        self.patience = patience
        self.initial: float | None = None
        self.strikes = 0

    def update(self, epoch_loss: float) -> bool:
        if self.initial is None:
            self.initial = abs(epoch_loss)
            return False
        if not math.isfinite(epoch_loss) or abs(epoch_loss) > self.factor * self.initial:
            self.strikes += 1
        else:
            self.strikes = 0
        return self.strikes >= self.patience

    def state(self) -> dict:
        return {"initial": self.initial, "strikes": self.strikes}

    def load(self, st: dict) -> None:
        self.initial = st["initial"]
        self.strikes = st["strikes"]


def train_lmp(dataset: Dataset, hp: LmpHyperParams, seed: int, epochs: int, out_dir=None,
              resume: bool = False, model: LatentPlanModel | None = None) -> LatentPlanModel:
    """Train encoder, prior and decoder; log each step and checkpoint each epoch.

    With ``out_dir`` the log goes to ``lmp_log.csv`` and checkpoints to
    ``ckpt/``. ``resume`` continues from the newest checkpoint there and
    reproduces the uninterrupted run bit for bit.
    """
    if len(dataset) < 10_000:
        raise ValueError(f"latent-plan training needs >= 10000 timesteps, dataset has {len(dataset)}")
    model = model or LatentPlanModel(hp, rngs.stream(seed, "lmp", "init"))
    data_rng = rngs.stream(seed, "lmp", "windows")
    noise_rng = rngs.stream(seed, "lmp", "noise")
    opt = Adam(model.named_parameters(), lr=hp.lr)
    guard = DivergenceGuard()
    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = out / "ckpt" if out else None
    log_path = out / "lmp_log.csv" if out else None
    start_epoch = 0
    if resume:
        if ckpt_dir is None:
            raise ValueError("resume needs an output directory")
        last = latest_epoch(ckpt_dir)
        if last is not None:
            arrays = load_checkpoint(ckpt_dir / f"epoch_{last:04d}.taco")
            meta = json.loads((ckpt_dir / f"epoch_{last:04d}.json").read_text())
            model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam.")})
            opt.load_state_arrays(arrays)
            rngs.set_state(data_rng, meta["data_rng"])
            rngs.set_state(noise_rng, meta["noise_rng"])
            guard.load(meta["guard"])
            start_epoch = last + 1
            _truncate_log(log_path, (last + 1) * hp.steps_per_epoch)
    if out is not None and start_epoch == 0:
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(log_path, [], LMP_LOG_COLUMNS, append=False)
    for epoch in range(start_epoch, epochs):
        rows = []
        epoch_total = 0.0
        for i in range(hp.steps_per_epoch):
            step = epoch * hp.steps_per_epoch + i + 1
            wins = [sample_window(data_rng, dataset) for _ in range(hp.batch_size)]
            obs, act, mask = stack_windows(wins)
            opt.zero_grad()
            try:
                total, parts = lmp_loss(model, obs, act, mask, noise_rng)
            except FloatingPointError as exc:
                ids = [(w.episode_id, w.start) for w in wins]
                raise TrainingDiverged(f"step {step}: {exc}; windows (episode, start) = {ids}") from exc
            total.backward()
            gn = opt.grad_norm()
            opt.step()
            epoch_total += parts["total"]
            rows.append((step, _fmt(parts["nll"]), _fmt(parts["kl"]), _fmt(parts["total"]), _fmt(gn)))
        epoch_mean = epoch_total / hp.steps_per_epoch
        log.info("lmp epoch %d loss %.4f", epoch, epoch_mean)
        tripped = guard.update(epoch_mean)
        if out is not None:
            _write_rows(log_path, rows, LMP_LOG_COLUMNS, append=True)
            meta = {"epoch": epoch, "data_rng": rngs.get_state(data_rng), "noise_rng": rngs.get_state(noise_rng),
                    "guard": guard.state(), "hp": asdict(hp), "seed": seed}
            save_training_state(ckpt_dir, epoch, model.state_dict(), opt.state_arrays(), meta)
        if tripped:
            raise TrainingDiverged(f"loss above 10x initial for {guard.patience} epochs (epoch {epoch})")
    return model


def _truncate_log(path: Path, keep_steps: int) -> None:
    if path is None or not path.exists():
        return
    lines = path.read_bytes().splitlines(keepends=True)
    path.write_bytes(b"".join(lines[: keep_steps + 1]))
