"""Network topologies shared by the latent-plan model, the high-level learner and the baselines."""
from __future__ import annotations

import numpy as np

from .numcore import tensor as T
from .numcore.distributions import GaussianParams, gaussian_from_head, mixture_from_head
from .numcore.nn import LSTM, MLP, LayerNorm, Linear, Module, TransformerBlock, _param
from .numcore.tensor import Tensor
from .playtable import ACT_DIM, MAX_DELTA, OBS_DIM

N_MIX_PARAMS = 30  # 10 components x (logit, mean, log-scale)


def normalize_actions(actions: np.ndarray) -> np.ndarray:
    """Scale the motion dims to [-1, 1]; the gripper command is already +-1."""
    out = np.array(actions, dtype=np.float64, copy=True)
    out[..., :2] /= MAX_DELTA
    return out


class Embedder(Module):
    """Per-observation feed-forward embedding (two layers)."""

    def __init__(self, rng: np.random.Generator, hidden: int = 64, width: int = 32):
        self.net = MLP([OBS_DIM, hidden, width], rng)
        self.width = width

    def forward(self, obs) -> Tensor:
        return self.net(obs)


class PlanEncoder(Module):
    """Masked transformer over a padded window of (observation, action) steps."""

    def __init__(self, rng: np.random.Generator, latent: int = 16, embed: int = 32, width: int = 64,
                 heads: int = 2, blocks: int = 2, ff: int = 128, max_len: int = 16):
        self.embed = Embedder(rng, width=embed)
        self.proj = Linear(embed + ACT_DIM, width, rng)
        self.pos = _param(rng.normal(0.0, 0.02, size=(max_len, width)))
        self.blocks = [TransformerBlock(width, heads, ff, rng) for _ in range(blocks)]
        self.ln_out = LayerNorm(width)
        self.head = Linear(width, 2 * latent, rng)

    def forward(self, obs, actions_norm, mask: np.ndarray) -> GaussianParams:
        mask = np.asarray(mask, dtype=bool)
        n = obs.shape[1]
        x = self.proj(T.concat([self.embed(obs), T.as_tensor(actions_norm)], axis=-1))
        x = x + self.pos[:n]
        for blk in self.blocks:
            x = blk(x, mask)
        x = self.ln_out(x)
        m = mask.astype(np.float64)[..., None]
        pooled = (x * m).sum(axis=1) * (1.0 / m.sum(axis=1))
        return gaussian_from_head(self.head(pooled))


class PlanPrior(Module):
    """Goal-conditioned plan distribution p(z | s_c, s_g); also the high-level actor."""

    def __init__(self, rng: np.random.Generator, latent: int = 16, embed: int = 32, width: int = 64,
                 layers: int = 3):
        self.embed = Embedder(rng, width=embed)
        self.net = MLP([2 * embed] + [width] * layers + [2 * latent], rng)

    def forward(self, s_c, s_g) -> GaussianParams:
        h = T.concat([self.embed(s_c), self.embed(s_g)], axis=-1)
        return gaussian_from_head(self.net(h))


class PlanDecoder(Module):
    """Recurrent action decoder: mixture over the two motion dims plus a gripper logit."""

    def __init__(self, rng: np.random.Generator, latent: int = 16, embed: int = 32, hidden: int = 128,
                 layers: int = 2):
        self.embed = Embedder(rng, width=embed)
        self.rnn = LSTM(embed + latent, hidden, layers, rng)
        self.head = Linear(hidden, 2 * N_MIX_PARAMS + 1, rng)

    def initial_state(self, batch: int):
        return self.rnn.initial_state(batch)

    def _split(self, out: Tensor):
        mix_raw, grip = T.split_last(out, [2 * N_MIX_PARAMS, 1])
        return mixture_from_head(mix_raw, 2), grip[..., 0]

    def forward(self, obs, z) -> tuple:
        """Decode a whole window with one plan; returns (mixture, gripper logits)."""
        b, n = obs.shape[0], obs.shape[1]
        emb = self.embed(obs)
        state = self.initial_state(b)
        outs = []
        for t in range(n):
            h, state = self.rnn.step(T.concat([emb[:, t], z], axis=-1), state)
            outs.append(h)
        hs = T.stack(outs, axis=1)
        return self._split(self.head(hs))

    def step(self, obs, z, state):
        h, state = self.rnn.step(T.concat([self.embed(obs), T.as_tensor(z)], axis=-1), state)
        mix, grip = self._split(self.head(h))
        return mix, grip, state


class Critic(Module):
    """Q(s, a, s_g) with its own observation embedder."""

    def __init__(self, rng: np.random.Generator, action_dim: int, embed: int = 32, width: int = 64,
                 layers: int = 3):
        self.embed = Embedder(rng, width=embed)
        self.net = MLP([2 * embed + action_dim] + [width] * layers + [1], rng)

    def forward(self, s, a, s_g) -> Tensor:
        h = T.concat([self.embed(s), self.embed(s_g), T.as_tensor(a)], axis=-1)
        return self.net(h)[..., 0]


class FlatActor(Module):
    """Goal-conditioned primitive-action policy: tanh-Gaussian motion, two-way gripper logits."""

    def __init__(self, rng: np.random.Generator, embed: int = 32, width: int = 64, layers: int = 3):
        self.embed = Embedder(rng, width=embed)
        self.net = MLP([2 * embed] + [width] * layers + [4 + 2], rng)

    def forward(self, s, s_g):
        out = self.net(T.concat([self.embed(s), self.embed(s_g)], axis=-1))
        gauss_raw, grip_logits = T.split_last(out, [4, 2])
        return gaussian_from_head(gauss_raw), grip_logits
