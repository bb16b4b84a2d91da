"""AdamW with decoupled weight decay, plus gradient-accumulation helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    gradient_accumulation_steps: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1), got {value}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.weight_decay >= 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if int(self.gradient_accumulation_steps) != self.gradient_accumulation_steps or self.gradient_accumulation_steps < 1:
            raise ConfigurationError(
                f"gradient_accumulation_steps must be an integer >= 1, got {self.gradient_accumulation_steps}")


class AdamW:
    """Optimizer over a named parameter set.

    Per-parameter state is the first/second moment buffers; the step
    counter is shared (all parameters are stepped together).
    """

    def __init__(self, params, config):
        if not isinstance(params, dict):
            params = {str(i): p for i, p in enumerate(params)}
        names = list(params)
        if len(set(names)) != len(names):
            raise ConfigurationError("parameter names must be unique")
        self.params = params
        self.config = config
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - cfg.beta1 ** t
        c2 = 1.0 - cfg.beta2 ** t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + cfg.epsilon) + cfg.weight_decay * p.data
            p.data = p.data - cfg.learning_rate * update

    def state_dict(self):
        return {"step": self.step_count,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}


def average_gradients(params, count):
    """Divide accumulated gradients by the number of micro-batches summed."""
    if count < 1:
        raise ConfigurationError("accumulation count must be >= 1")
    for p in params:
        if p.grad is not None:
            p.grad = p.grad / count
