"""Deterministic optimization of the retraining objectives.

Batch orders are a pure function of ``(seed, absolute epoch)``. A run that
starts at epoch ``k`` sees exactly the orders a longer run would have seen
from epoch ``k`` on, which is what lets a cold-start retrain replay the
base run and then share its final epochs with every warm-start retrain.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigurationError, DivergenceError, TrialError
from .objectives import Objective, ObjectiveKind

log = logging.getLogger(__name__)

OPTIMIZERS = ("gd", "sgd", "sgd_momentum")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings.

    ``gd`` always uses the full batch. ``momentum`` is heavy-ball momentum
    and applies to ``gd`` and ``sgd_momentum``. ``lr_decay`` maps an
    absolute epoch to a factor that multiplies the learning rate from that
    epoch on; factors accumulate. ``grad_tol`` stops a full-batch run once
    the gradient norm falls to it.
    """

    optimizer: str = "sgd"
    learning_rate: float = 0.1
    momentum: float = 0.0
    batch_size: int | str = "full"
    epochs: int = 100
    seed: int = 0
    lr_decay: tuple = ()
    grad_tol: float | None = None

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.optimizer == "sgd" and self.momentum:
            raise ConfigurationError("plain sgd takes no momentum; use sgd_momentum")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size != "full" and (not isinstance(self.batch_size, int) or self.batch_size < 1):
            raise ConfigurationError("batch_size must be a positive integer or 'full'")
        decay = self.lr_decay.items() if isinstance(self.lr_decay, dict) else self.lr_decay
        object.__setattr__(
            self, "lr_decay", tuple(sorted((int(e), float(f)) for e, f in decay))
        )

    def lr_at(self, epoch):
        lr = self.learning_rate
        for e, f in self.lr_decay:
            if e <= epoch:
                lr *= f
        return lr

    def batch_for(self, n):
        if self.optimizer == "gd" or self.batch_size == "full":
            return n
        return min(int(self.batch_size), n)


@dataclass
class TrainResult:
    params: np.ndarray
    costs: list
    epochs_run: int
    order_digest: str
    grad_norm: float | None = None


def epoch_order(seed, epoch, n):
    """The row permutation used in a given absolute epoch."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def train(objective, init, config, spec, dataset, start_epoch=0, tag=None):
    """Optimize ``objective`` from ``init``; deterministic given the inputs.

    Returns a :class:`TrainResult` carrying the final parameters, the mean
    minibatch objective of every epoch and a digest of the batch orders.
    Raises :class:`DivergenceError` if the cost becomes non-finite.
    """
    obj = objective if isinstance(objective, Objective) else Objective(objective, spec, dataset)
    theta = nn.check_params(init, spec).copy()
    n = obj.n
    batch = config.batch_for(n)
    full = batch >= n
    use_momentum = config.optimizer != "sgd" and config.momentum > 0
    buf = np.zeros_like(theta) if use_momentum else None
    digest = hashlib.sha256()
    costs = []
    grad_norm = None
    epochs_run = 0
    for k in range(config.epochs):
        epoch = start_epoch + k
        lr = config.lr_at(epoch)
        if full:
            chunks = [None]
        else:
            order = epoch_order(config.seed, epoch, n)
            digest.update(order.tobytes())
            chunks = [order[i: i + batch] for i in range(0, n, batch)]
        total = 0.0
        for idx in chunks:
            v, g = obj.batch_value_and_grad(theta, idx)
            if not np.isfinite(v) or not np.all(np.isfinite(g)):
                raise DivergenceError(epoch, tag)
            total += v
            if full:
                grad_norm = float(np.linalg.norm(g))
                if config.grad_tol is not None and grad_norm <= config.grad_tol:
                    break
            if use_momentum:
                buf *= config.momentum
                buf += g
                theta -= lr * buf
            else:
                theta -= lr * g
        else:
            costs.append(total / len(chunks))
            epochs_run += 1
            continue
        costs.append(total)
        break
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(start_epoch + epochs_run, tag)
    return TrainResult(theta, costs, epochs_run, digest.hexdigest(), grad_norm)


@dataclass
class BaseRun:
    """The base training run: its initialization, result and settings."""

    spec: nn.NetworkSpec
    config: TrainConfig
    theta0: np.ndarray
    theta_s: np.ndarray
    result: TrainResult = field(repr=False)
    init_seed: int = 0

    @property
    def epochs(self):
        return self.config.epochs


def train_base(spec, dataset, config, init_seed=None):
    """Train on the full dataset from a seeded initialization."""
    init_seed = config.seed if init_seed is None else init_seed
    theta0 = nn.init_params(spec, init_seed)
    kind = ObjectiveKind("cold_downweighted")
    res = train(kind, theta0, config, spec, dataset, tag="base")
    return BaseRun(spec, config, theta0, res.params, res, init_seed)


@dataclass(frozen=True)
class ProtocolConfig:
    """Knobs of the six-parameter-set retraining protocol.

    ``retrain_epochs`` defaults to half the base epochs. Runs of the two
    Bregman objectives use the base learning rate times
    ``bregman_lr_factor``. ``bregman_epochs`` overrides their budget, and
    ``bregman_batch_size`` / ``bregman_momentum`` their batching and
    momentum (a momentum switches plain sgd to sgd_momentum).
    """

    damping: float = 1e-3
    retrain_epochs: int | None = None
    bregman_lr_factor: float = 0.1
    bregman_epochs: int | None = None
    bregman_batch_size: int | str | None = None
    bregman_momentum: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if self.damping < 0:
            raise ConfigurationError("damping must be nonnegative")
        if not self.bregman_lr_factor > 0:
            raise ConfigurationError("bregman_lr_factor must be positive")
        for name in ("retrain_epochs", "bregman_epochs"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    def retrain_budget(self, base_epochs):
        if self.retrain_epochs is not None:
            return self.retrain_epochs
        return max(1, base_epochs // 2)


PROTOCOL_TAGS = ("base", "cold", "warm", "proximal", "pbrf", "linear_pbrf")


def retrain(base, dataset, tag, removed, pcfg, reference_outputs=None):
    """One retraining run of the protocol, identified by its short tag."""
    cfg = base.config
    k = base.epochs
    budget = pcfg.retrain_budget(k)
    eps = pcfg.epsilon
    spec = base.spec
    if tag == "cold":
        kind = ObjectiveKind("cold_downweighted", removed, eps)
        run_cfg = replace(cfg, epochs=k + budget)
        return train(kind, base.theta0, run_cfg, spec, dataset, 0, tag).params
    if tag == "warm":
        kind = ObjectiveKind("warm_downweighted", removed, eps)
    elif tag == "proximal":
        kind = ObjectiveKind("proximal", removed, eps, pcfg.damping, base.theta_s)
    elif tag in ("pbrf", "linear_pbrf"):
        name = "proximal_bregman" if tag == "pbrf" else "linearized_proximal_bregman"
        kind = ObjectiveKind(name, removed, eps, pcfg.damping, base.theta_s, reference_outputs)
        run_cfg = replace(
            cfg,
            learning_rate=cfg.learning_rate * pcfg.bregman_lr_factor,
            epochs=pcfg.bregman_epochs or budget,
        )
        if pcfg.bregman_batch_size is not None:
            run_cfg = replace(run_cfg, batch_size=pcfg.bregman_batch_size)
        if pcfg.bregman_momentum is not None:
            opt = "sgd_momentum" if run_cfg.optimizer == "sgd" else run_cfg.optimizer
            run_cfg = replace(run_cfg, optimizer=opt, momentum=pcfg.bregman_momentum)
        return train(kind, base.theta_s, run_cfg, spec, dataset, k, tag).params
    else:
        raise ConfigurationError(f"unknown protocol tag {tag!r}")
    run_cfg = replace(cfg, epochs=budget)
    return train(kind, base.theta_s, run_cfg, spec, dataset, k, tag).params


def six_way_protocol(base, dataset, removed, pcfg, tags=PROTOCOL_TAGS, trial=None):
    """Base parameters plus the five retrained parameter sets for ``removed``.

    Cold retraining runs ``K + K/2`` epochs from the base initialization,
    replaying the base batch orders; every other run starts from the base
    parameters at absolute epoch ``K``.
    """
    ref = nn.outputs(base.theta_s, base.spec, nn.data_arrays(base.spec, dataset)[0])
    out = {}
    for tag in tags:
        if tag == "base":
            out[tag] = base.theta_s.copy()
            continue
        try:
            out[tag] = retrain(base, dataset, tag, removed, pcfg, ref)
        except Exception as exc:
            raise TrialError(trial, tag, exc) from exc
        log.debug("trial %s: %s done", trial, tag)
    return out
