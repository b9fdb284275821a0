"""AdamW with decoupled weight decay and a warmup/cosine learning-rate schedule."""

from __future__ import annotations

import math

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """AdamW over a name -> parameter mapping.

    Weight decay is applied to parameters with two or more dimensions only;
    biases, norm gains and 1-D tables are left undecayed.
    """

    def __init__(self, params: dict[str, Tensor], lr=1e-4, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in self.params.items():
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def clip_grad_norm(self, max_norm: float) -> float:
        total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                                  for p in self.params.values() if p.grad is not None)))
        if max_norm > 0 and total > max_norm:
            scale = max_norm / (total + 1e-12)
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return total

    def step(self) -> None:
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"no gradient for parameter(s): {', '.join(missing)}")
        st = self.state
        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        for name, p in self.params.items():
            g = p.grad
            m = st.first_moment[name]
            v = st.second_moment[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            if st.weight_decay and p.data.ndim >= 2:
                p.data *= 1.0 - st.lr * st.weight_decay
            p.data -= (st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)).astype(p.data.dtype)

    # checkpoint helpers
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.asarray(self.state.step)}
        for name in self.params:
            out[f"m/{name}"] = self.state.first_moment[name]
            out[f"v/{name}"] = self.state.second_moment[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state.step = int(arrays["step"])
        for name in self.params:
            self.state.first_moment[name] = np.array(arrays[f"m/{name}"])
            self.state.second_moment[name] = np.array(arrays[f"v/{name}"])


def warmup_cosine(step: int, total_steps: int, warmup_steps: int = 0, floor: float = 0.0) -> float:
    """Learning-rate multiplier for optimiser step ``step`` (1-based).

    Linear warmup over ``warmup_steps``, then cosine decay from 1 to ``floor``
    at ``total_steps``. Steps beyond the end stay at ``floor``.
    """
    if step < 1 or total_steps < 1 or warmup_steps < 0:
        raise ValueError("step and total_steps must be >= 1, warmup_steps >= 0")
    if not 0.0 <= floor <= 1.0:
        raise ValueError(f"floor must lie in [0, 1], got {floor}")
    if step <= warmup_steps:
        return step / warmup_steps
    span = total_steps - warmup_steps
    if span <= 0:
        return 1.0
    progress = min(1.0, (step - warmup_steps) / span)
    return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
