"""Damped inverse-curvature-vector products.

Three solvers share one operator interface: a dense eigendecomposition
(the reference for small problems), conjugate gradients, and LiSSA, the
truncated Neumann series ``sigma^-1 sum_{t=0}^{T} (I - A/sigma)^t v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .errors import (
    ConfigurationError,
    IndefiniteCurvatureError,
    ScaleTooSmallError,
    ShapeError,
    SingularCurvatureError,
    TuningError,
)

LISSA_SCALE_GRID = (10, 25, 50, 100, 150, 200, 250, 300, 400, 500)


@dataclass(frozen=True)
class CurvatureOperator:
    """``v -> (C + damping I) v`` for a fixed symmetric curvature ``C``.

    ``apply`` already includes the damping. ``apply_rows(v, idx)`` is the
    same product with ``C`` estimated on a subset of training rows; it is
    only needed by stochastic LiSSA, and ``n`` is the row count it samples
    from.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    dim: int
    kind: str = "gnh"
    damping: float = 0.0
    apply_rows: Callable | None = None
    n: int | None = None

    def __call__(self, v):
        return self.apply(v)


@dataclass
class SolverReport:
    solution: np.ndarray
    iterations: int
    residual_norm: float
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "config": self.config,
        }


def curvature_operator(params, spec, dataset, kind="gnh", damping=1e-3):
    """Damped GNH or Hessian of the cost at ``params`` over ``dataset``.

    The folded-in L2 strength of ``spec`` is part of the curvature.
    """
    if kind not in ("gnh", "hessian"):
        raise ConfigurationError(f"unknown curvature kind {kind!r}")
    if damping < 0:
        raise ConfigurationError("damping must be nonnegative")
    params = nn.check_params(params, spec)
    X, T = nn.data_arrays(spec, dataset)
    base = nn.GaussNewtonOperator(params, spec, X) if kind == "gnh" else nn.HessianOperator(params, spec, X, T)
    shift = damping + spec.l2_strength

    def apply(v):
        return base(v) + shift * v

    def apply_rows(v, idx):
        return base.on_rows(v, idx) + shift * v

    return CurvatureOperator(apply, spec.n_params, kind, damping, apply_rows, X.shape[0])


def matrix_operator(C, damping=0.0):
    """Wrap an explicit symmetric matrix; handy for tests and small problems."""
    C = np.asarray(C, dtype=np.float64)
    return CurvatureOperator(lambda v: C @ v + damping * v, C.shape[0], "matrix", damping)


def _check_rhs(op, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (op.dim,):
        raise ShapeError(f"right-hand side has shape {v.shape}, expected ({op.dim},)")
    return v


def _residual(op, x, v):
    return float(np.linalg.norm(op.apply(x) - v))


def materialize(op):
    """Dense symmetric matrix of the operator, built column by column."""
    d = op.dim
    A = np.empty((d, d))
    e = np.zeros(d)
    for i in range(d):
        e[i] = 1.0
        A[:, i] = op.apply(e)
        e[i] = 0.0
    return 0.5 * (A + A.T)


class ExactInverse:
    """Eigendecomposition of a materialized operator, reusable across solves."""

    def __init__(self, op, max_dim=2000):
        if op.dim > max_dim:
            raise ConfigurationError(f"dimension {op.dim} exceeds the exact-solver cap {max_dim}")
        self.op = op
        w, V = np.linalg.eigh(materialize(op))
        amin = float(np.min(np.abs(w)))
        if amin <= op.dim * np.finfo(float).eps * max(float(np.max(np.abs(w))), 1e-300):
            raise SingularCurvatureError(float(w[np.argmin(np.abs(w))]))
        self.eigenvalues = w
        self.eigenvectors = V

    def solve(self, v):
        v = _check_rhs(self.op, v)
        x = self.eigenvectors @ ((self.eigenvectors.T @ v) / self.eigenvalues)
        return SolverReport(x, 0, _residual(self.op, x, v), {"solver": "exact"})


def solve_exact(op, v, max_dim=2000):
    """Solve by dense eigendecomposition; cost ``O(d^3)``."""
    v = _check_rhs(op, v)
    return ExactInverse(op, max_dim).solve(v)


def solve_cg(op, v, max_iter=None, tol=1e-10):
    """Conjugate gradients from ``x0 = 0`` until ``||r|| <= tol * ||v||``."""
    v = _check_rhs(op, v)
    max_iter = op.dim if max_iter is None else max_iter
    x = np.zeros_like(v)
    cfg = {"solver": "cg", "max_iter": max_iter, "tol": tol}
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return SolverReport(x, 0, 0.0, cfg)
    r = v.copy()
    p = r.copy()
    rr = float(r @ r)
    it = 0
    while it < max_iter:
        Ap = op.apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteCurvatureError(
                f"non-positive curvature p^T A p = {pAp:.3e} at iteration {it}"
            )
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol * vnorm:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return SolverReport(x, it, _residual(op, x, v), cfg)


def _neumann(apply, v, depth, scale):
    r = v.copy()
    history = [float(np.linalg.norm(r))]
    for t in range(1, depth + 1):
        r = v + r - apply(r) / scale
        nrm = float(np.linalg.norm(r))
        if not np.isfinite(nrm):
            raise ScaleTooSmallError(f"LiSSA recursion overflowed at step {t} (scale {scale})")
        history.append(nrm)
        if t >= 20 and nrm >= 10.0 * history[t - 10]:
            raise ScaleTooSmallError(
                f"LiSSA recursion grew {nrm / history[t - 10]:.1f}x over 10 steps "
                f"at step {t}; scale {scale} is too small"
            )
    return r / scale


def solve_lissa(op, v, depth=5000, repeats=1, scale=10.0, seed=0, batch_size=None):
    """LiSSA estimate of ``A^-1 v``.

    With ``batch_size`` of ``None`` (or at least the row count) every step
    uses the full operator and the result is deterministic. Otherwise each
    step draws a fresh seeded minibatch and the ``repeats`` estimates are
    averaged in order.
    """
    v = _check_rhs(op, v)
    if scale <= 0 or depth < 0 or repeats < 1:
        raise ConfigurationError("LiSSA needs scale > 0, depth >= 0 and repeats >= 1")
    cfg = {"solver": "lissa", "depth": depth, "repeats": repeats, "scale": scale,
           "seed": seed, "batch_size": batch_size}
    stochastic = batch_size is not None and op.n is not None and batch_size < op.n
    if not stochastic:
        x = _neumann(op.apply, v, depth, scale)
        return SolverReport(x, depth, _residual(op, x, v), cfg)
    if op.apply_rows is None:
        raise ConfigurationError("stochastic LiSSA needs an operator with apply_rows")
    total = np.zeros_like(v)
    for rep in range(repeats):
        rng = np.random.default_rng([int(seed), rep])

        def apply(u, rng=rng):
            return op.apply_rows(u, rng.choice(op.n, size=batch_size, replace=False))

        total += _neumann(apply, v, depth, scale)
    x = total / repeats
    return SolverReport(x, depth * repeats, _residual(op, x, v), cfg)


def tune_lissa_scale(op, probe, grid=LISSA_SCALE_GRID, depth=5000, tol=1e-3, reference=None, **lissa_kw):
    """Smallest scale in ``grid`` whose LiSSA solution matches a CG reference.

    Returns ``(scale, residuals)`` where ``residuals`` maps each tried
    scale to its relative error (``inf`` for a diverging recursion).
    """
    probe = _check_rhs(op, probe)
    if reference is None:
        reference = solve_cg(op, probe).solution
    ref_norm = max(float(np.linalg.norm(reference)), 1e-300)
    residuals = {}
    for scale in sorted(grid):
        try:
            x = solve_lissa(op, probe, depth=depth, scale=scale, **lissa_kw).solution
        except ScaleTooSmallError:
            residuals[scale] = float("inf")
            continue
        err = float(np.linalg.norm(x - reference)) / ref_norm
        residuals[scale] = err
        if err <= tol:
            return scale, residuals
    raise TuningError(residuals)
