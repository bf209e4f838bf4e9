"""First-order optimizers (SGD, RMSProp, Adam) over named parameters.

step() returns the update the caller subtracts; the optimizer itself never
touches parameter memory. Buffers are keyed by parameter name, created
lazily, and serialize to JSON for checkpoints.

All three updates act entrywise with symmetric functions of the gradient
history, and epsilon is added inside the denominator, so a skew-symmetric
gradient stream yields skew-symmetric updates. That closure property is
what lets the same class drive both ordinary weights and the skew
parameters of an orthogonal weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError

_KINDS = ("sgd", "rmsprop", "adam")


@dataclass
class Optimizer:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)
    _t: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ContractError(f"unknown optimizer {self.kind!r}, expected one of {_KINDS}")
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")

    def step(self, name: str, grad: np.ndarray) -> np.ndarray:
        """Update to subtract from the parameter registered under name.

        Rejects non-finite gradients before any buffer is mutated, so a
        poisoned step leaves the optimizer state intact.
        """
        grad = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name!r}")
        if self.kind == "sgd":
            return self.lr * grad
        if self.kind == "rmsprop":
            v = self._v.get(name)
            if v is None:
                v = np.zeros_like(grad)
            v = self.decay * v + (1.0 - self.decay) * grad * grad
            self._v[name] = v
            return self.lr * grad / (np.sqrt(v) + self.eps)
        t = self._t.get(name, 0) + 1
        m = self._m.get(name)
        v = self._v.get(name)
        if m is None:
            m = np.zeros_like(grad)
            v = np.zeros_like(grad)
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self._m[name] = m
        self._v[name] = v
        self._t[name] = t
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "decay": self.decay,
            "eps": self.eps,
            "m": {k: v.tolist() for k, v in self._m.items()},
            "v": {k: v.tolist() for k, v in self._v.items()},
            "t": dict(self._t),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "Optimizer":
        opt = cls(kind=blob["kind"], lr=blob["lr"], beta1=blob["beta1"],
                  beta2=blob["beta2"], decay=blob["decay"], eps=blob["eps"])
        opt._m = {k: np.asarray(v, dtype=np.float64) for k, v in blob["m"].items()}
        opt._v = {k: np.asarray(v, dtype=np.float64) for k, v in blob["v"].items()}
        opt._t = {k: int(v) for k, v in blob["t"].items()}
        return opt
