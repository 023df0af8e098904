"""Flat comparison methods: LMP inference from the plan prior, and CQL with hindsight goals over primitive actions."""
from __future__ import annotations

import numpy as np

from . import rngs
from .datastore import Dataset
from .hrl import (
    CqlHyperParams,
    CqlLearner,
    GoalSamplerConfig,
    TransitionBatch,
    run_cql_training,
    sample_goals,
)
from .lmp import LatentPlanModel, decode_action
from .networks import FlatActor, normalize_actions
from .numcore import tensor as T
from .numcore.distributions import GaussianParams, gaussian_sample_tanh, tanh_gaussian_logprob
from .playtable import MAX_DELTA

REPLAN_EVERY = 15
FLAT_ACTION_DIM = 3
GUMBEL_TAU_START = 1.0
GUMBEL_TAU_END = 0.5


# ------------------------------------------------------------ plan policies
class PlanPolicy:
    """Batched latent-plan controller: pick a plan every ``replan`` steps, decode greedily in between.

    ``planner(s, g)`` returns plans in (-1, 1)^16. A plan is also picked
    whenever ``restart`` flags an env (new goal).
    """

    def __init__(self, model: LatentPlanModel, planner, replan: int = REPLAN_EVERY):
        self.model = model
        self.planner = planner
        self.replan = replan
        self.n = 0
        self.counter = np.zeros(0, dtype=np.int64)
        self.replans: list[int] = []  # step counters at which env 0 replanned

    def reset(self, n: int) -> None:
        self.n = n
        self.counter = np.zeros(n, dtype=np.int64)
        self.z = np.zeros((n, self.model.hp.latent_dim))
        self.hidden = self.model.decoder.initial_state(n)
        self.replans = []

    def restart(self, which: np.ndarray) -> None:
        self.counter[np.asarray(which, dtype=bool)] = 0

    def act(self, obs: np.ndarray, goals: np.ndarray) -> np.ndarray:
        fresh = self.counter % self.replan == 0
        if fresh.any():
            if fresh[0]:
                self.replans.append(int(self.counter[0]))
            idx = np.flatnonzero(fresh)
            self.z[idx] = self.planner(obs[idx], goals[idx])
            for h, c in self.hidden:
                h.data[idx] = 0.0
                c.data[idx] = 0.0
        act, self.hidden = decode_action(self.model, obs, self.z, self.hidden, greedy=True)
        self.counter += 1
        return act


def lmp_inference_policy(model: LatentPlanModel, rng: np.random.Generator, sample: bool = True,
                         replan: int = REPLAN_EVERY) -> PlanPolicy:
    """Goal-conditioned imitation: plans come from the prior."""

    def planner(s, g):
        with T.no_grad():
            q = model.prior(s, g)
            if not sample:
                return np.tanh(q.mean.data)
            z, _, _ = gaussian_sample_tanh(q, rng)
            return z.data

    return PlanPolicy(model, planner, replan)


def random_plan_policy(model: LatentPlanModel, rng: np.random.Generator, replan: int = REPLAN_EVERY) -> PlanPolicy:
    return PlanPolicy(model, lambda s, g: rng.uniform(-1.0, 1.0, size=(len(s), model.hp.latent_dim)), replan)


class RandomActionPolicy:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def reset(self, n: int) -> None:
        self.n = n

    def restart(self, which) -> None:
        pass

    def act(self, obs, goals) -> np.ndarray:
        n = len(obs)
        d = self.rng.uniform(-MAX_DELTA, MAX_DELTA, size=(n, 2))
        g = np.where(self.rng.random(n) < 0.5, -1.0, 1.0)
        return np.column_stack([d, g])


# ------------------------------------------------------------- flat CQL
class FlatPolicy:
    """Tanh-Gaussian motion plus a relaxed two-way gripper (open, close).

    Critic-space actions are (dx / 0.05, dy / 0.05, y_close - y_open).
    """

    def __init__(self, net: FlatActor, temperature: float = GUMBEL_TAU_START):
        self.net = net
        self.temperature = temperature

    def modules(self):
        return {"actor": self.net}

    def sample(self, s, g, rng: np.random.Generator, n: int | None = None):
        q, logits = self.net(s, g)
        if n is not None:
            q = GaussianParams(T.expand_dims(q.mean, 1), T.expand_dims(q.log_std, 1))
            logits = T.expand_dims(logits, 1)
            shape = (q.mean.shape[0], n)
        else:
            shape = (q.mean.shape[0],)
        motion, logp_m, _ = gaussian_sample_tanh(q, rng, rng.standard_normal(shape + (2,)))
        gumbel = rng.gumbel(size=shape + (2,))
        y = T.softmax((logits + gumbel) * (1.0 / self.temperature), axis=-1)
        relaxed = y[..., 1:2] - y[..., 0:1]
        hard = np.argmax(logits.data + gumbel, axis=-1)
        onehot = np.eye(2)[hard]
        logp_c = (T.log_softmax(logits, axis=-1) * onehot).sum(axis=-1)
        return T.concat([motion, relaxed], axis=-1), logp_m + logp_c

    def hard_sample(self, s, g, rng: np.random.Generator) -> np.ndarray:
        """Gripper snapped to {-1, +1}."""
        with T.no_grad():
            a, _ = self.sample(s, g, rng)
        a = a.data.copy()
        a[..., 2] = np.where(a[..., 2] > 0, 1.0, -1.0)
        return a

    def bc_logprob(self, s, g, a):
        q, logits = self.net(s, g)
        onehot = np.eye(2)[(np.asarray(a)[:, 2] > 0).astype(np.int64)]
        logp_c = (T.log_softmax(logits, axis=-1) * onehot).sum(axis=-1)
        return tanh_gaussian_logprob(q, np.asarray(a)[:, :2]) + logp_c

    def greedy(self, s, g) -> np.ndarray:
        with T.no_grad():
            q, logits = self.net(s, g)
        grip = np.where(logits.data[:, 1] > logits.data[:, 0], 1.0, -1.0)
        return np.column_stack([np.tanh(q.mean.data), grip])


class FlatController:
    """Batched greedy env controller around a trained flat policy."""

    def __init__(self, policy: FlatPolicy):
        self.policy = policy

    def reset(self, n: int) -> None:
        self.n = n

    def restart(self, which) -> None:
        pass

    def act(self, obs, goals) -> np.ndarray:
        a = self.policy.greedy(obs, goals)
        return np.column_stack([a[:, :2] * MAX_DELTA, a[:, 2]])


def build_flat_transitions(rng: np.random.Generator, ds: Dataset, cfg: GoalSamplerConfig, batch_size: int,
                           starts: np.ndarray | None = None) -> TransitionBatch:
    """Single-step transitions with goals at offsets of Delta single steps."""
    starts_all = ds.valid_starts(2) if starts is None else starts
    t = starts_all[rng.integers(len(starts_all), size=batch_size)]
    goals, r, neg = sample_goals(rng, cfg, ds, t, stride=1)
    return TransitionBatch(ds.observations[t], normalize_actions(ds.actions[t]), ds.observations[t + 1], goals, r, neg)


def gumbel_temperature(step: int, total: int) -> float:
    """Linear anneal from 1.0 to 0.5 over training."""
    frac = min(max((step - 1) / max(total - 1, 1), 0.0), 1.0)
    return GUMBEL_TAU_START + frac * (GUMBEL_TAU_END - GUMBEL_TAU_START)


def train_flat_cql(dataset: Dataset, hp: CqlHyperParams, cfg: GoalSamplerConfig, seed: int, epochs: int,
                   out_dir=None) -> CqlLearner:
    init = rngs.stream(seed, "flat", "init")
    policy = FlatPolicy(FlatActor(init))
    learner = CqlLearner(policy, FLAT_ACTION_DIM, hp, init)
    starts = dataset.valid_starts(2)

    def next_batch(rng):
        return build_flat_transitions(rng, dataset, cfg, hp.batch_size, starts)

    def on_step(step, total):
        policy.temperature = gumbel_temperature(step, total)

    return run_cql_training(learner, next_batch, hp, epochs, seed, rngs.stream(seed, "flat", "data"),
                            rngs.stream(seed, "flat", "noise"), out_dir, "baseline_log.csv",
                            extra_cols={"method": "cql-her"}, on_step=on_step)
