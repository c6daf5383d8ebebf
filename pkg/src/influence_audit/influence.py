"""Influence-function estimators built on damped curvature solves.

The predicted parameter change for removing a set ``R`` of training rows
is ``eps * (C + lam I)^-1 sum_{z in R} grad L_z`` with ``C`` the GNH or the
Hessian of the cost at the given parameters. Test-loss influence is the
first-order change of a test loss under that step,
``eps * grad L_test^T (C + lam I)^-1 grad L_z``; positive means removing
``z`` raises the test loss. The unperturbed test loss is never included;
callers compare deltas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, solvers
from .errors import ConfigurationError

CURVATURES = ("gnh", "hessian")
SOLVERS = ("exact", "cg", "lissa")


@dataclass(frozen=True)
class InfluenceConfig:
    """Estimator settings. ``epsilon`` of ``None`` means ``1/N`` per removed row."""

    epsilon: float | None = None
    damping: float = 1e-3
    curvature: str = "gnh"
    solver: str = "exact"
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None
    lissa_depth: int = 5000
    lissa_repeats: int = 1
    lissa_scale: float = 10.0
    lissa_batch_size: int | None = None
    seed: int = 0
    exact_max_dim: int = 2000

    def __post_init__(self):
        if self.curvature not in CURVATURES:
            raise ConfigurationError(f"unknown curvature {self.curvature!r}")
        if self.solver not in SOLVERS:
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.damping < 0:
            raise ConfigurationError("damping must be nonnegative")
        if self.curvature == "hessian" and self.solver != "exact" and self.damping <= 0:
            raise ConfigurationError(
                "iterative solvers on the (possibly indefinite) Hessian need damping > 0"
            )

    def describe(self):
        return {
            "solver": self.solver,
            "curvature": self.curvature,
            "lambda": self.damping,
        }


@dataclass
class InfluenceEstimate:
    delta_params: np.ndarray
    removed: tuple
    report: solvers.SolverReport | None
    epsilon: float = 0.0
    metadata: dict = field(default_factory=dict)


def solve(op, v, cfg, exact=None):
    """Dispatch one damped solve according to ``cfg``."""
    if cfg.solver == "exact":
        if exact is None:
            exact = solvers.ExactInverse(op, cfg.exact_max_dim)
        return exact.solve(v)
    if cfg.solver == "cg":
        return solvers.solve_cg(op, v, cfg.cg_max_iter, cfg.cg_tol)
    return solvers.solve_lissa(
        op, v, cfg.lissa_depth, cfg.lissa_repeats, cfg.lissa_scale, cfg.seed, cfg.lissa_batch_size
    )


class InfluenceEngine:
    """Influence queries at fixed parameters over one training set.

    Builds the damped curvature operator once and, for the exact solver,
    factorizes it once.
    """

    def __init__(self, params, spec, dataset, cfg):
        self.params = nn.check_params(params, spec)
        self.spec = spec
        self.dataset = dataset
        self.cfg = cfg
        self.X, self.T = nn.data_arrays(spec, dataset)
        self.n = self.X.shape[0]
        self.epsilon = 1.0 / self.n if cfg.epsilon is None else float(cfg.epsilon)
        self.op = solvers.curvature_operator(params, spec, dataset, cfg.curvature, cfg.damping)
        self._exact = None
        self.solve_count = 0

    def solve(self, v):
        if self.cfg.solver == "exact" and self._exact is None:
            self._exact = solvers.ExactInverse(self.op, self.cfg.exact_max_dim)
        self.solve_count += 1
        return solve(self.op, v, self.cfg, self._exact)

    def removed_grad(self, removed):
        pos = self.dataset.positions(removed)
        if not len(pos):
            return np.zeros(self.spec.n_params)
        return nn.weighted_loss_and_grad(self.params, self.spec, self.X[pos], self.T[pos])[1]

    def test_grad(self, test):
        """Gradient of the mean loss over the rows of ``test``."""
        g = nn.loss_grad(self.params, self.spec, test.inputs, test.targets)
        return g / len(test)

    def param_influence(self, removed):
        removed = tuple(int(i) for i in removed)
        g = self.removed_grad(removed)
        if not np.any(g) or self.epsilon == 0.0:
            return InfluenceEstimate(np.zeros_like(g), removed, None, self.epsilon)
        rep = self.solve(g)
        return InfluenceEstimate(self.epsilon * rep.solution, removed, rep, self.epsilon)

    def s_test(self, test):
        g = self.test_grad(test)
        if not np.any(g):
            return np.zeros_like(g)
        return self.solve(g).solution

    def score(self, s_test, train_grad):
        return self.epsilon * float(np.dot(train_grad, s_test))

    def train_scores(self, s_test):
        """Scores of every training row against one ``s_test`` vector."""
        return self.epsilon * nn.loss_grad_dots(
            self.params, self.spec, self.X, self.dataset.targets, s_test
        )

    def test_loss_influence(self, removed, test):
        gt = self.test_grad(test)
        gz = self.removed_grad(removed)
        if not np.any(gt) or not np.any(gz):
            return 0.0
        return self.epsilon * float(gt @ self.solve(gz).solution)

    def self_influences(self):
        """Self-influence of every training row, one solve per row."""
        out = np.empty(self.n)
        for k in range(self.n):
            g = nn.weighted_loss_and_grad(
                self.params, self.spec, self.X[k: k + 1], self.T[k: k + 1]
            )[1]
            out[k] = 0.0 if not np.any(g) else self.epsilon * float(g @ self.solve(g).solution)
        return out


def param_influence(params, spec, dataset, removed, cfg):
    """Predicted parameter change for removing the rows with ids ``removed``."""
    return InfluenceEngine(params, spec, dataset, cfg).param_influence(removed)


def test_loss_influence(params, spec, dataset, removed, test, cfg):
    """Predicted change of the mean loss on ``test`` when ``removed`` is dropped."""
    return InfluenceEngine(params, spec, dataset, cfg).test_loss_influence(removed, test)


def self_influence(params, spec, dataset, z, cfg):
    engine = InfluenceEngine(params, spec, dataset, cfg)
    return engine.test_loss_influence((z,), dataset.take(dataset.positions([z])))


def stest_batch(params, spec, dataset, test, cfg, engine=None):
    """Precompute ``s_test`` for each test row: one solve per test point.

    Score a training row against it with :meth:`InfluenceEngine.score` or
    all rows at once with :meth:`InfluenceEngine.train_scores`.
    """
    engine = engine or InfluenceEngine(params, spec, dataset, cfg)
    return {int(i): engine.s_test(test.take([k])) for k, i in enumerate(test.ids)}
