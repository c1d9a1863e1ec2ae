"""Optimizers and learning-rate schedulers.

Optimizers keep per-parameter state keyed by an arbitrary hashable key and
return updated arrays instead of mutating their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd_momentum"
    lr: float = 0.001
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        for name in ("momentum", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


MODEL_OPTIMIZER = OptimizerConfig("sgd_momentum", lr=0.001, momentum=0.9)
PREDICTOR_OPTIMIZER = OptimizerConfig("adam", lr=0.0001)


class Optimizer:
    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.lr = config.lr
        self.state = {}

    def step(self, key, param, grad):
        if param.shape != grad.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match parameter {key!r} shape {param.shape}")
        return self._update(key, param, grad)

    def _update(self, key, param, grad):
        raise NotImplementedError


class SGDMomentum(Optimizer):
    """v <- mu*v + g ; p <- p - lr*v"""

    def _update(self, key, param, grad):
        mu = self.config.momentum
        v = self.state.get(key)
        v = grad.copy() if v is None else mu * v + grad
        self.state[key] = v
        return param - self.lr * v


class Adam(Optimizer):
    def _update(self, key, param, grad):
        c = self.config
        t, m, v = self.state.get(key, (0, np.zeros_like(param), np.zeros_like(param)))
        t += 1
        m = c.beta1 * m + (1.0 - c.beta1) * grad
        v = c.beta2 * v + (1.0 - c.beta2) * grad * grad
        self.state[key] = (t, m, v)
        m_hat = m / (1.0 - c.beta1 ** t)
        v_hat = v / (1.0 - c.beta2 ** t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + c.eps)


def make_optimizer(config: OptimizerConfig) -> Optimizer:
    return {"sgd_momentum": SGDMomentum, "adam": Adam}[config.kind](config)


def optimizer_step(optimizer, params: dict, grads: dict, prefix=()):
    """Apply one update to every array in ``params``; returns a new dict."""
    if params.keys() != grads.keys():
        raise ValueError(f"parameter names {sorted(params)} differ from gradient names {sorted(grads)}")
    return {name: optimizer.step(prefix + (name,), params[name], grads[name]) for name in params}


@dataclass
class MultiStepLR:
    base_lr: float
    milestones: tuple = ()
    gamma: float = 0.1

    def lr_at(self, epoch):
        hits = sum(1 for m in self.milestones if epoch >= m)
        return self.base_lr * self.gamma ** hits

    def step(self, epoch, metric=None):
        return self.lr_at(epoch)


@dataclass
class ReduceLROnPlateau:
    """Minimizing plateau policy with the usual relative threshold."""

    base_lr: float
    patience: int = 10
    factor: float = 0.1
    threshold: float = 1e-4
    min_lr: float = 0.0
    lr: float = field(init=False)
    best: float = field(init=False, default=float("inf"))
    bad_epochs: int = field(init=False, default=0)

    def __post_init__(self):
        self.lr = self.base_lr

    def step(self, epoch, metric=None):
        if metric is None:
            return self.lr
        if metric < self.best * (1.0 - self.threshold):
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr


@dataclass(frozen=True)
class LrSchedulerConfig:
    kind: str = "none"
    patience: int = 10
    factor: float = 0.1
    milestones: tuple = ()
    gamma: float = 0.1

    def __post_init__(self):
        if self.kind not in ("none", "plateau", "multistep"):
            raise ValueError(f"unknown lr scheduler kind {self.kind!r}")


class _ConstantLR:
    def __init__(self, base_lr):
        self.base_lr = base_lr

    def step(self, epoch, metric=None):
        return self.base_lr


def make_scheduler(config: LrSchedulerConfig, base_lr):
    if config.kind == "plateau":
        return ReduceLROnPlateau(base_lr, patience=config.patience, factor=config.factor)
    if config.kind == "multistep":
        return MultiStepLR(base_lr, tuple(config.milestones), config.gamma)
    return _ConstantLR(base_lr)


def scheduler_step(sched, epoch, metric=None):
    return sched.step(epoch, metric)
