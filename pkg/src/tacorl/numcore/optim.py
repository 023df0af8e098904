from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    """Raised when a gradient holds NaN or inf; training must halt."""


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a fixed, named parameter set."""

    def __init__(self, named_params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: dict[str, Tensor] = dict(named_params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for k, p in self.params.items():
            self.state.m[k] = np.zeros_like(p.data)
            self.state.v[k] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def step(self) -> None:
        for k, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient in parameter {k!r}")
        st = self.state
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        corr1 = 1.0 - b1**st.step
        corr2 = 1.0 - b2**st.step
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = st.m[k]
            v = st.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / corr1
            v_hat = v / corr2
            p.data = p.data - st.lr * m_hat / (np.sqrt(v_hat) + st.eps)

    # flat dict view used by checkpoints
    def state_arrays(self, prefix: str = "adam") -> dict[str, np.ndarray]:
        out = {f"{prefix}.step": np.array([float(self.state.step)])}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.state.m[k].copy()
            out[f"{prefix}.v.{k}"] = self.state.v[k].copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "adam") -> None:
        self.state.step = int(arrays[f"{prefix}.step"][0])
        for k in self.params:
            self.state.m[k] = np.array(arrays[f"{prefix}.m.{k}"], copy=True)
            self.state.v[k] = np.array(arrays[f"{prefix}.v.{k}"], copy=True)
