"""SGD, Adam, and a sharpness-aware wrapper over named parameter dictionaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMIZER_KINDS = ("sgd", "adam")
_DEFAULT_LR = {"sgd": 0.01, "adam": 3e-4}


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adam"
    lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sam: bool = False
    sam_rho: float = 0.05

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.sam_rho < 0:
            raise ValueError("sam_rho must be non-negative")

    @property
    def resolved_lr(self) -> float:
        return self.lr if self.lr is not None else _DEFAULT_LR[self.kind]

    def to_config(self) -> dict:
        cfg = {"kind": self.kind, "lr": self.resolved_lr}
        if self.kind == "sgd":
            cfg["momentum"] = self.momentum
        else:
            cfg.update(beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        if self.sam:
            cfg.update(sam=True, sam_rho=self.sam_rho)
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "OptimizerSpec":
        allowed = {"kind", "lr", "momentum", "beta1", "beta2", "eps", "sam", "sam_rho"}
        unknown = set(cfg) - allowed
        if unknown:
            raise ValueError(f"unknown optimizer config keys: {sorted(unknown)}")
        return cls(**cfg)


class Optimizer:
    """Stateful inner optimizer; step() returns fresh parameter arrays."""

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self._state: dict[str, dict] = {}
        self._t = 0

    def step(self, params: dict, grads: dict) -> dict:
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise ValueError(f"non-finite gradient for {name!r}")
        lr = self.spec.resolved_lr
        updated = {}
        if self.spec.kind == "sgd":
            for name, p in params.items():
                g = grads[name]
                buf = self._state.setdefault(name, {"buf": np.zeros_like(p)})["buf"]
                buf = self.spec.momentum * buf + g
                self._state[name]["buf"] = buf
                updated[name] = p - lr * buf
        else:
            self._t += 1
            correct1 = 1.0 - self.spec.beta1 ** self._t
            correct2 = 1.0 - self.spec.beta2 ** self._t
            for name, p in params.items():
                g = grads[name]
                st = self._state.setdefault(name, {"m": np.zeros_like(p), "v": np.zeros_like(p)})
                st["m"] = self.spec.beta1 * st["m"] + (1.0 - self.spec.beta1) * g
                st["v"] = self.spec.beta2 * st["v"] + (1.0 - self.spec.beta2) * g * g
                m_hat = st["m"] / correct1
                v_hat = st["v"] / correct2
                updated[name] = p - lr * m_hat / (np.sqrt(v_hat) + self.spec.eps)
        return updated


def global_grad_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def sam_step(optimizer: Optimizer, params: dict, grad_fn):
    """One training step, sharpness-aware when the spec asks for it.

    grad_fn(params) -> (loss_value, grads). With sam enabled the gradient is
    recomputed at params + rho * g / ||g|| (same batch, same stochastic draws)
    and the inner optimizer applies that gradient from the unperturbed params.
    rho = 0 reduces exactly to the inner optimizer: the perturbation is the
    zero vector, so the second pass is skipped.
    """
    spec = optimizer.spec
    value, grads = grad_fn(params)
    if spec.sam and spec.sam_rho > 0:
        scale = spec.sam_rho / (global_grad_norm(grads) + 1e-12)
        shifted = {name: p + scale * grads[name] for name, p in params.items()}
        _, grads = grad_fn(shifted)
    return value, optimizer.step(params, grads)
