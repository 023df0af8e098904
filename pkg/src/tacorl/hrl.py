"""High-level learner: latent-plan transitions, hindsight goals and conservative Q-learning.

The CQL engine here is generic over the action space; the flat baseline
reuses it with primitive actions.
"""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rngs
from .datastore import MAX_WINDOW, Dataset, Window, mine_negative
from .lmp import DivergenceGuard, LatentPlanModel, TrainingDiverged, encode, save_training_state
from .networks import Critic, PlanPrior
from .numcore import tensor as T
from .numcore.distributions import GaussianParams, gaussian_sample_tanh, tanh_gaussian_logprob
from .numcore.nn import Module
from .numcore.optim import Adam
from .numcore.tensor import Tensor

log = logging.getLogger(__name__)

HRL_LOG_COLUMNS = ("step", "critic_loss", "actor_loss", "cons_gap", "entropy_coef", "mean_q", "frac_r1")
LOG_2 = math.log(2.0)


@dataclass
class GoalSamplerConfig:
    p: float = 0.3
    k: int = MAX_WINDOW
    positive_fraction: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"geometric p must lie in (0, 1), got {self.p}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError(f"positive_fraction must lie in [0, 1], got {self.positive_fraction}")

    @property
    def negative_fraction(self) -> float:
        return 1.0 - self.positive_fraction

    @property
    def stride(self) -> int:
        return self.k - 1


@dataclass
class CqlHyperParams:
    critic_lr: float = 3e-4
    actor_lr: float = 1e-4
    alpha_lr: float = 1e-3
    gamma: float = 0.95
    tau: float = 0.005
    cql_alpha: float = 1.0
    n_ood: int = 4
    batch_size: int = 64
    bc_warmstart_epochs: int = 5
    steps_per_epoch: int = 200
    target_entropy: float = -16.0
    init_entropy_coef: float = 0.01
    critic_width: int = 64
    critic_layers: int = 3

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")


# ------------------------------------------------------------ relabeling
def sample_goal(rng: np.random.Generator, cfg: GoalSamplerConfig, ds: Dataset, t: int,
                stride: int | None = None):
    """Hindsight goal for the transition starting at flat index ``t``.

    Returns ``(goal, r, negative, delta)``; ``delta`` is 0 on the negative
    branch. r = 1 exactly when the positive branch draws delta = 1.
    """
    stride = cfg.stride if stride is None else stride
    end = ds.episode_end(t)
    if t + stride > end:
        raise ValueError(f"transition at {t} with stride {stride} runs past episode end {end}")
    if rng.random() < cfg.positive_fraction:
        delta = int(rng.geometric(cfg.p))
        gi, r = goal_for_offset(ds, t, delta, stride)
        return ds.observations[gi], r, False, delta
    goal, _ = mine_negative(ds.index, ds.observations, ds.observations[t + stride], rng)
    return goal, 0.0, True, 0


def goal_for_offset(ds: Dataset, t: int, delta: int, stride: int) -> tuple[int, float]:
    """Goal index and reward for offset ``delta``; the index clips at episode end."""
    if delta < 1:
        raise ValueError(f"offset must be >= 1, got {delta}")
    return min(t + delta * stride, ds.episode_end(t)), float(delta == 1)


def sample_goals(rng: np.random.Generator, cfg: GoalSamplerConfig, ds: Dataset, starts, stride: int | None = None):
    goals = np.empty((len(starts), ds.observations.shape[1]))
    r = np.empty(len(starts))
    neg = np.zeros(len(starts), dtype=bool)
    for i, t in enumerate(starts):
        goals[i], r[i], neg[i], _ = sample_goal(rng, cfg, ds, int(t), stride)
    return goals, r, neg


@dataclass
class TransitionBatch:
    s: np.ndarray
    a: np.ndarray  # dataset action in the critic's space
    s_next: np.ndarray
    g: np.ndarray
    r: np.ndarray
    negative: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.s)


# ---------------------------------------------------- latent transitions
def build_transition(window: Window, model: LatentPlanModel, rng: np.random.Generator):
    """(s_t, z_t, s_next) from one window with the frozen encoder."""
    with T.no_grad():
        q = encode(model, window.observations[None], window.actions[None], window.mask[None])
        z, _, _ = gaussian_sample_tanh(q, rng)
    last = window.raw_length - 1
    return window.observations[0], z.data[0], window.observations[last]


class PlanCache:
    """Frozen-encoder posteriors for every full-length window start."""

    def __init__(self, model: LatentPlanModel, ds: Dataset, k: int = MAX_WINDOW, chunk: int = 256):
        self.k = k
        self.starts = ds.valid_starts(k)
        d = model.hp.latent_dim
        self.mean = np.empty((len(self.starts), d))
        self.log_std = np.empty((len(self.starts), d))
        offs = np.arange(k)
        mask = np.ones((chunk, k), dtype=bool)
        with T.no_grad():
            for lo in range(0, len(self.starts), chunk):
                idx = self.starts[lo : lo + chunk, None] + offs
                q = encode(model, ds.observations[idx], ds.actions[idx], mask[: len(idx)])
                self.mean[lo : lo + chunk] = q.mean.data
                self.log_std[lo : lo + chunk] = q.log_std.data

    def __len__(self) -> int:
        return len(self.starts)

    def sample_z(self, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = self.mean[rows] + np.exp(self.log_std[rows]) * rng.standard_normal((len(rows), self.mean.shape[1]))
        return np.tanh(u)


# ---------------------------------------------------------------- policies
class LatentActor:
    """Tanh-Gaussian policy over latent plans; same topology as the plan prior."""

    def __init__(self, net: PlanPrior):
        self.net = net

    @property
    def action_dim(self) -> int:
        return self.net.net.layers[-1].weight.shape[1] // 2

    def modules(self) -> dict[str, Module]:
        return {"actor": self.net}

    def dist(self, s, g) -> GaussianParams:
        return self.net(s, g)

    def sample(self, s, g, rng: np.random.Generator, n: int | None = None, temperature=None):
        """Reparameterized samples; with ``n`` the result has a sample axis 1."""
        q = self.dist(s, g)
        if n is not None:
            q = GaussianParams(T.expand_dims(q.mean, 1), T.expand_dims(q.log_std, 1))
            eps = rng.standard_normal((q.mean.shape[0], n, q.mean.shape[-1]))
        else:
            eps = rng.standard_normal(q.mean.shape)
        z, logp, _ = gaussian_sample_tanh(q, rng, eps)
        return z, logp

    def bc_logprob(self, s, g, a) -> Tensor:
        return tanh_gaussian_logprob(self.dist(s, g), a)

    def greedy(self, s, g) -> np.ndarray:
        with T.no_grad():
            return np.tanh(self.dist(s, g).mean.data)


@contextlib.contextmanager
def frozen(*modules: Module):
    """Stop gradient flow into these modules' parameters for the duration."""
    params = [p for m in modules for p in m.parameters()]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def soft_update(critics, target_critics, rate: float) -> None:
    """target <- (1 - rate) * target + rate * online, per parameter."""
    for online, target in zip(critics, target_critics):
        src = dict(online.named_parameters())
        for k, p in target.named_parameters():
            p.data = (1.0 - rate) * p.data + rate * src[k].data


def _min_q(critics, s, a, g) -> Tensor:
    return T.minimum(critics[0](s, a, g), critics[1](s, a, g))


def bellman_target(r, s_next, g, target_critics, actor, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """1 where r = 1 (no bootstrap); gamma * min target Q at an actor sample otherwise."""
    r = np.asarray(r, dtype=np.float64)
    with T.no_grad():
        a_next, _ = actor.sample(s_next, g, rng)
        q_next = _min_q(target_critics, s_next, a_next, g).data
    return np.where(r == 1.0, 1.0, gamma * q_next)


def cql_critic_loss(batch: TransitionBatch, critics, target_critics, actor, hp: CqlHyperParams,
                    rng: np.random.Generator, target: np.ndarray | None = None, ood: dict | None = None):
    """Sum over both critics of Bellman MSE + cql_alpha * (logsumexp over OOD actions - dataset Q).

    The OOD set per state holds ``n_ood`` uniform actions (corrected by the
    uniform log-density), ``n_ood`` actor samples (corrected by their
    detached log-prob) and the dataset action. ``target`` and ``ood`` may be
    passed in to pin the random draws.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    b, a_dim, n = len(batch), batch.a.shape[1], hp.n_ood
    if target is None:
        target = bellman_target(batch.r, batch.s_next, batch.g, target_critics, actor, hp.gamma, rng)
    if ood is None:
        uniform = rng.uniform(-1.0, 1.0, size=(b, n, a_dim))
        with T.no_grad():
            pol, pol_logp = actor.sample(batch.s, batch.g, rng, n)
        ood = {"uniform": uniform, "policy": pol.data, "policy_logp": pol_logp.data}
    # every candidate action for each state, dataset action last
    cand = np.concatenate([ood["uniform"], ood["policy"], batch.a[:, None, :]], axis=1)
    corr = np.concatenate([
        np.full((b, n), a_dim * LOG_2),  # minus log of the uniform density 2**-a_dim
        -ood["policy_logp"],
        np.zeros((b, 1)),
    ], axis=1)
    m = cand.shape[1]
    s_rep = np.repeat(batch.s[:, None, :], m, axis=1)
    g_rep = np.repeat(batch.g[:, None, :], m, axis=1)
    total = None
    stats = {"bellman": [], "cons_gap": [], "q_data": []}
    for critic in critics:
        q_all = critic(s_rep, cand, g_rep)  # (b, m)
        q_data = q_all[:, m - 1]
        err = q_data - target
        bellman = (err * err).mean()
        gap = T.logsumexp(q_all + corr, axis=1).mean() - q_data.mean()
        loss_i = bellman + hp.cql_alpha * gap
        total = loss_i if total is None else total + loss_i
        stats["bellman"].append(float(bellman.data))
        stats["cons_gap"].append(float(gap.data))
        stats["q_data"].append(float(q_data.data.mean()))
    if not np.isfinite(total.data):
        raise FloatingPointError("non-finite critic loss")
    stats["target"] = target
    return total, stats


def cql_actor_loss(batch: TransitionBatch, critics, actor, entropy_coef: float, rng: np.random.Generator):
    """E[entropy_coef * log pi(a|s,g) - min Q(s, a, g)] with reparameterized a.

    Returns ``(loss, logp)``; critics receive no gradient.
    """
    a, logp = actor.sample(batch.s, batch.g, rng)
    with frozen(*critics):
        q = _min_q(critics, batch.s, a, batch.g)
    loss = (entropy_coef * logp - q).mean()
    return loss, logp.data


def entropy_coef_loss(log_alpha: Tensor, logp: np.ndarray, target_entropy: float) -> Tensor:
    """Gradient descent raises alpha when entropy (-logp) sits below the target."""
    return -1.0 * (log_alpha * float(np.mean(logp + target_entropy)))


def bc_loss(actor, batch: TransitionBatch) -> Tensor:
    """NLL of the encoder plan given the window's own end state as goal.

    The relabeled goal can lie many plans ahead; cloning the first plan
    toward it averages unrelated plans together, so BC uses s_next.
    """
    return -1.0 * actor.bc_logprob(batch.s, batch.s_next, batch.a).mean()


class CqlLearner:
    """Two critics + targets, an actor and a tuned entropy coefficient."""

    def __init__(self, actor, action_dim: int, hp: CqlHyperParams, rng: np.random.Generator):
        self.hp = hp
        self.actor = actor
        self.critics = [Critic(rng, action_dim, width=hp.critic_width, layers=hp.critic_layers) for _ in range(2)]
        self.targets = [c.clone() for c in self.critics]
        self.log_alpha = Tensor(np.array([math.log(hp.init_entropy_coef)]), requires_grad=True)
        critic_params = [(f"critic{i}.{k}", p) for i, c in enumerate(self.critics) for k, p in c.named_parameters()]
        actor_params = [(f"{name}.{k}", p) for name, mod in actor.modules().items() for k, p in mod.named_parameters()]
        self.critic_opt = Adam(critic_params, lr=hp.critic_lr)
        self.actor_opt = Adam(actor_params, lr=hp.actor_lr)
        self.alpha_opt = Adam([("log_alpha", self.log_alpha)], lr=hp.alpha_lr)

    @property
    def entropy_coef(self) -> float:
        return float(np.exp(self.log_alpha.data[0]))

    def update(self, batch: TransitionBatch, rng: np.random.Generator, bc: bool = False) -> dict:
        hp = self.hp
        self.critic_opt.zero_grad()
        closs, st = cql_critic_loss(batch, self.critics, self.targets, self.actor, hp, rng)
        closs.backward()
        self.critic_opt.step()

        self.actor_opt.zero_grad()
        if bc:
            aloss = bc_loss(self.actor, batch)
            with T.no_grad():
                _, logp = self.actor.sample(batch.s, batch.g, rng)
            logp = logp.data
        else:
            aloss, logp = cql_actor_loss(batch, self.critics, self.actor, self.entropy_coef, rng)
        aloss.backward()
        self.actor_opt.step()

        self.alpha_opt.zero_grad()
        entropy_coef_loss(self.log_alpha, logp, hp.target_entropy).backward()
        self.alpha_opt.step()

        soft_update(self.critics, self.targets, hp.tau)
        return {
            "critic_loss": float(closs.data),
            "actor_loss": float(aloss.data),
            "cons_gap": float(np.mean(st["cons_gap"])),
            "entropy_coef": self.entropy_coef,
            "mean_q": float(np.mean(st["q_data"])),
            "frac_r1": float(np.mean(batch.r)),
        }

    # flat array view for checkpoints
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, mod in self.actor.modules().items():
            out.update({f"{name}.{k}": v for k, v in mod.state_dict().items()})
        for i, c in enumerate(self.critics):
            out.update({f"critic{i}.{k}": v for k, v in c.state_dict().items()})
        for i, c in enumerate(self.targets):
            out.update({f"target{i}.{k}": v for k, v in c.state_dict().items()})
        out["log_alpha"] = self.log_alpha.data.copy()
        out.update(self.critic_opt.state_arrays("adam_critic"))
        out.update(self.actor_opt.state_arrays("adam_actor"))
        out.update(self.alpha_opt.state_arrays("adam_alpha"))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], optim: bool = True) -> None:
        def sub(prefix):
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        for name, mod in self.actor.modules().items():
            mod.load_state_dict(sub(name + "."))
        for i, c in enumerate(self.critics):
            c.load_state_dict(sub(f"critic{i}."))
        for i, c in enumerate(self.targets):
            c.load_state_dict(sub(f"target{i}."))
        self.log_alpha.data = np.array(arrays["log_alpha"], copy=True)
        if optim:
            self.critic_opt.load_state_arrays(arrays, "adam_critic")
            self.actor_opt.load_state_arrays(arrays, "adam_actor")
            self.alpha_opt.load_state_arrays(arrays, "adam_alpha")


# ------------------------------------------------------------- training
def make_plan_batch(rng: np.random.Generator, cache: PlanCache, ds: Dataset, cfg: GoalSamplerConfig,
                    batch_size: int) -> TransitionBatch:
    rows = rng.integers(len(cache), size=batch_size)
    starts = cache.starts[rows]
    z = cache.sample_z(rows, rng)
    goals, r, neg = sample_goals(rng, cfg, ds, starts, cfg.stride)
    return TransitionBatch(ds.observations[starts], z, ds.observations[starts + cfg.stride], goals, r, neg)


def bc_warmstart(actor: LatentActor, cache: PlanCache, ds: Dataset, cfg: GoalSamplerConfig, hp: CqlHyperParams,
                 rng: np.random.Generator, epochs: int | None = None) -> list[float]:
    """Behaviour-clone the actor on encoder plans; returns the mean loss per epoch."""
    epochs = hp.bc_warmstart_epochs if epochs is None else epochs
    opt = Adam(actor.net.named_parameters(), lr=hp.actor_lr)
    history = []
    for _ in range(epochs):
        acc = 0.0
        for _ in range(hp.steps_per_epoch):
            batch = make_plan_batch(rng, cache, ds, cfg, hp.batch_size)
            opt.zero_grad()
            loss = bc_loss(actor, batch)
            loss.backward()
            opt.step()
            acc += float(loss.data)
        history.append(acc / hp.steps_per_epoch)
    return history


def _fmt(x) -> str:
    return repr(float(x))


def run_cql_training(learner: CqlLearner, next_batch, hp: CqlHyperParams, epochs: int, seed: int,
                     data_rng, noise_rng, out_dir=None, log_name: str = "hrl_log.csv", extra_cols=None,
                     on_step=None) -> CqlLearner:
    """Shared loop: BC warm start epochs first, then CQL actor updates; log + checkpoint each epoch."""
    guard = DivergenceGuard()
    out = Path(out_dir) if out_dir is not None else None
    extra_cols = extra_cols or {}
    columns = tuple(extra_cols) + HRL_LOG_COLUMNS
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / log_name, "w", newline="") as fh:
            csv.writer(fh).writerow(columns)
    for epoch in range(epochs):
        rows = []
        acc = 0.0
        for i in range(hp.steps_per_epoch):
            step = epoch * hp.steps_per_epoch + i + 1
            if on_step is not None:
                on_step(step, epochs * hp.steps_per_epoch)
            batch = next_batch(data_rng)
            try:
                st = learner.update(batch, noise_rng, bc=epoch < hp.bc_warmstart_epochs)
            except FloatingPointError as exc:
                dump = {k: getattr(batch, k).tolist() for k in ("s", "a", "g", "r")}
                raise TrainingDiverged(f"step {step}: {exc}; batch = {json.dumps(dump)[:2000]}") from exc
            acc += st["critic_loss"]
            rows.append([str(v) for v in extra_cols.values()] + [step] + [_fmt(st[c]) for c in HRL_LOG_COLUMNS[1:]])
        tripped = guard.update(acc / hp.steps_per_epoch)
        if out is not None:
            with open(out / log_name, "a", newline="") as fh:
                csv.writer(fh).writerows(rows)
            meta = {"epoch": epoch, "guard": guard.state(), "hp": asdict(hp), "seed": seed,
                    "data_rng": rngs.get_state(data_rng), "noise_rng": rngs.get_state(noise_rng)}
            save_training_state(out / "ckpt", epoch, learner.state_arrays(), {}, meta)
        log.info("%s epoch %d critic %.4f", log_name, epoch, acc / hp.steps_per_epoch)
        if tripped:
            raise TrainingDiverged(f"critic loss above 10x initial for {guard.patience} epochs (epoch {epoch})")
    return learner


def train_hrl(dataset: Dataset, model: LatentPlanModel, hp: CqlHyperParams, cfg: GoalSamplerConfig, seed: int,
              epochs: int, out_dir=None, cache: PlanCache | None = None) -> CqlLearner:
    """Actor starts as a copy of the plan prior; the encoder stays frozen."""
    cache = cache or PlanCache(model, dataset, cfg.k)
    actor = LatentActor(model.prior.clone())
    learner = CqlLearner(actor, model.hp.latent_dim, hp, rngs.stream(seed, "hrl", "init"))
    data_rng = rngs.stream(seed, "hrl", "data")
    noise_rng = rngs.stream(seed, "hrl", "noise")

    def next_batch(rng):
        return make_plan_batch(rng, cache, dataset, cfg, hp.batch_size)

    return run_cql_training(learner, next_batch, hp, epochs, seed, data_rng, noise_rng, out_dir, "hrl_log.csv")
