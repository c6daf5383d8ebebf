"""The ladder of retraining objectives between LOO retraining and influence.

Five objectives, from the downweighted training cost to its linearized
proximal Bregman counterpart. With ``eps`` the downweighting per removed
example, ``R`` the removed set, ``a`` the anchor parameters and ``lam``
the damping:

* ``cold_downweighted`` / ``warm_downweighted``:
  ``J(theta) - eps * sum_{z in R} L_z(theta)`` (they differ only in the
  initialization used by the trainer);
* ``proximal``: the above plus ``lam/2 ||theta - a||^2``;
* ``proximal_bregman``: ``(1/N) sum_i D_i(f(theta, x_i), f(a, x_i))
  - eps * sum_z L_z(theta) + (lam + l2)/2 ||theta - a||^2``;
* ``linearized_proximal_bregman``: the same with the network replaced by
  its first-order expansion at ``a`` and the loss by its second-order
  expansion, i.e. ``(1/N) sum_i 1/2 d_i^T H_i d_i - eps * g^T theta
  + (lam + l2)/2 ||theta - a||^2`` where ``d_i = J_i (theta - a)`` and
  ``g = sum_z grad L_z(a)``.

The L2 regularizer folded into ``J`` enters the Bregman objectives as its
own Bregman divergence, ``l2/2 ||theta - a||^2``.

Minibatch estimates average the per-example data term over the batch;
the removal, proximity and regularization terms are applied in full at
every step. For the first three objectives removal is expressed as a
per-example weight ``1 - N * eps`` on the data term, so ``eps = 1/N``
drops the example from every batch it lands in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError

TAGS = (
    "cold_downweighted",
    "warm_downweighted",
    "proximal",
    "proximal_bregman",
    "linearized_proximal_bregman",
)
_ANCHORED = {"proximal", "proximal_bregman", "linearized_proximal_bregman"}
_BREGMAN = {"proximal_bregman", "linearized_proximal_bregman"}


@dataclass(frozen=True, eq=False)
class ObjectiveKind:
    """Which objective to optimize and its removal / anchoring data.

    ``epsilon`` of ``None`` means ``1/N`` per removed example.
    ``reference_outputs`` of ``None`` are computed from ``anchor``.
    """

    tag: str
    removed: tuple = ()
    epsilon: float | None = None
    damping: float = 0.0
    anchor: np.ndarray | None = None
    reference_outputs: np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigurationError(f"unknown objective tag {self.tag!r}")
        if self.damping < 0:
            raise ConfigurationError("damping must be nonnegative")
        object.__setattr__(self, "removed", tuple(int(i) for i in self.removed))


class Objective:
    """An :class:`ObjectiveKind` bound to a network and a dataset."""

    def __init__(self, kind, spec, dataset):
        if kind.tag in _ANCHORED and kind.anchor is None:
            raise ConfigurationError(f"objective {kind.tag!r} needs anchor parameters")
        self.kind = kind
        self.spec = spec
        self.X, self.T = nn.data_arrays(spec, dataset)
        self.n = self.X.shape[0]
        self.epsilon = 1.0 / self.n if kind.epsilon is None else float(kind.epsilon)
        self.removed_pos = dataset.positions(kind.removed)
        self.anchor = None if kind.anchor is None else nn.check_params(kind.anchor, spec)
        self.tag = kind.tag

        self.weights = None
        if kind.tag not in _BREGMAN and len(self.removed_pos):
            w = np.ones(self.n)
            np.subtract.at(w, self.removed_pos, self.n * self.epsilon)
            self.weights = w
        self.ref = None
        if kind.tag == "proximal_bregman":
            ref = kind.reference_outputs
            if ref is None:
                ref = nn.outputs(self.anchor, spec, self.X)
            self.ref = np.asarray(ref, dtype=np.float64)
        self.removed_grad = None
        if kind.tag == "linearized_proximal_bregman":
            if len(self.removed_pos):
                Xr, Tr = self.X[self.removed_pos], self.T[self.removed_pos]
                self.removed_grad = nn.weighted_loss_and_grad(self.anchor, spec, Xr, Tr)[1]
            else:
                self.removed_grad = np.zeros(spec.n_params)

    def _removed_term(self, params):
        if not len(self.removed_pos) or self.epsilon == 0.0:
            return 0.0, 0.0
        Xr, Tr = self.X[self.removed_pos], self.T[self.removed_pos]
        v, g = nn.weighted_loss_and_grad(params, self.spec, Xr, Tr)
        return self.epsilon * v, self.epsilon * g

    def batch_value_and_grad(self, params, idx=None):
        """Objective estimate on rows ``idx`` (all rows when ``None``)."""
        spec = self.spec
        if idx is None:
            X, T, b = self.X, self.T, self.n
        else:
            X, T, b = self.X[idx], self.T[idx], len(idx)
        tag = self.tag
        if tag in _BREGMAN:
            diff = params - self.anchor
            quad = self.kind.damping + spec.l2_strength
            if tag == "proximal_bregman":
                ref = self.ref if idx is None else self.ref[idx]
                v, g = nn.bregman_and_grad(params, spec, X, ref)
                v, g = v / b, g / b
                rv, rg = self._removed_term(params)
                v, g = v - rv, g - rg
            else:
                g = nn.weighted_gnh_vp(self.anchor, spec, X, diff) / b
                v = 0.5 * float(diff @ g)
                eg = self.epsilon * self.removed_grad
                v, g = v - float(eg @ params), g - eg
            v += 0.5 * quad * float(diff @ diff)
            return v, g + quad * diff

        w = None
        if self.weights is not None:
            w = self.weights if idx is None else self.weights[idx]
        v, g = nn.weighted_loss_and_grad(params, spec, X, T, w)
        v, g = v / b, g / b
        l2 = spec.l2_strength
        if l2:
            v += 0.5 * l2 * float(params @ params)
            g = g + l2 * params
        if tag == "proximal":
            lam = self.kind.damping
            diff = params - self.anchor
            v += 0.5 * lam * float(diff @ diff)
            g = g + lam * diff
        return v, g

    def value(self, params):
        return self.batch_value_and_grad(params)[0]

    def grad(self, params):
        return self.batch_value_and_grad(params)[1]

    def bregman_term(self, params):
        """Mean Bregman divergence to the anchor's predictions (data part only)."""
        if self.tag != "proximal_bregman":
            raise ConfigurationError("only the proximal Bregman objective has this term")
        v, _ = nn.bregman_and_grad(params, self.spec, self.X, self.ref)
        return v / self.n


def evaluate_objective(kind, params, spec, dataset):
    params = nn.check_params(params, spec)
    return Objective(kind, spec, dataset).value(params)


def gradient_of_objective(kind, params, spec, dataset):
    params = nn.check_params(params, spec)
    return Objective(kind, spec, dataset).grad(params)
