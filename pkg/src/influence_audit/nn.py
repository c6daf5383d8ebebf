"""Dense feed-forward networks with exact derivative oracles.

Parameters live in one flat float64 vector. The layout is layer-major:
for each layer the weight matrix of shape ``(fan_in, fan_out)`` flattened
row-major, followed by its bias. A layer computes ``a @ W + b``; hidden
layers apply their activation and the last layer is linear.

Every oracle here is matrix-free. Gradients are reverse mode, output
Jacobian-vector products are forward mode, Hessian-vector products use
the R-operator (forward mode over the reverse pass), and Gauss-Newton
products chain a JVP, the output Hessian, and a VJP.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import losses
from .errors import ConfigurationError, DataError, EmptyDataError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture, loss, and folded-in L2 strength of a network.

    ``activation`` is either one name used by every hidden layer or a
    sequence with one name per hidden layer.
    """

    layer_widths: tuple[int, ...]
    activation: str | tuple[str, ...] = "relu"
    loss_kind: str = "squared_error"
    l2_strength: float = 0.0
    hidden_activations: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ConfigurationError(
                "layer_widths needs at least two entries, all >= 1"
            )
        object.__setattr__(self, "layer_widths", widths)
        n_hidden = len(widths) - 2
        if isinstance(self.activation, str):
            acts = (self.activation,) * n_hidden
        else:
            acts = tuple(self.activation)
            object.__setattr__(self, "activation", acts)
            if len(acts) != n_hidden:
                raise ConfigurationError(
                    f"{len(acts)} activations given for {n_hidden} hidden layers"
                )
        for a in acts:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        object.__setattr__(self, "hidden_activations", acts)
        if self.loss_kind not in losses.LOSS_KINDS:
            raise ConfigurationError(f"unsupported loss kind {self.loss_kind!r}")
        if not self.l2_strength >= 0:
            raise ConfigurationError("l2_strength must be nonnegative")

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def output_dim(self):
        return self.layer_widths[-1]

    @property
    def n_layers(self):
        return len(self.layer_widths) - 1

    @property
    def n_params(self):
        w = self.layer_widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))

    def to_dict(self):
        return {
            "layer_widths": list(self.layer_widths),
            "activation": list(self.hidden_activations),
            "loss_kind": self.loss_kind,
            "l2_strength": self.l2_strength,
        }

    def digest(self):
        """Stable short hash identifying the architecture and loss."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def check_params(params, spec):
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ShapeError(
            f"parameter vector has shape {params.shape}, expected ({spec.n_params},)"
        )
    if not np.all(np.isfinite(params)):
        raise DataError("parameter vector has non-finite entries")
    return params


def unflatten(params, spec):
    """Split a flat parameter vector into per-layer ``(W, b)`` views."""
    layers = []
    offset = 0
    w = spec.layer_widths
    for i in range(spec.n_layers):
        n_in, n_out = w[i], w[i + 1]
        W = params[offset: offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = params[offset: offset + n_out]
        offset += n_out
        layers.append((W, b))
    return layers


def flatten(layers):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


def init_params(spec, seed):
    """Per-layer uniform initialization in ``+-1/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    parts = []
    w = spec.layer_widths
    for i in range(spec.n_layers):
        bound = 1.0 / np.sqrt(w[i])
        parts.append(rng.uniform(-bound, bound, size=w[i] * w[i + 1]))
        parts.append(rng.uniform(-bound, bound, size=w[i + 1]))
    return np.concatenate(parts)


# --- activations -----------------------------------------------------------

def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return expit(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _dact(name, z, a):
    # relu'(0) is taken to be 0
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _d2act(name, z, a):
    if name == "sigmoid":
        s = a * (1.0 - a)
        return s * (1.0 - 2.0 * a)
    if name == "tanh":
        return -2.0 * a * (1.0 - a * a)
    return None  # zero for relu and identity


class _Pass:
    """Forward-pass cache: layer inputs, pre-activations, derivatives."""

    __slots__ = ("inputs", "pre", "slopes", "curvs", "output")

    def __init__(self, layers, spec, X):
        self.inputs = [X]
        self.pre = []
        self.slopes = []
        self.curvs = []
        a = X
        last = len(layers) - 1
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            self.pre.append(z)
            if i < last:
                name = spec.hidden_activations[i]
                a = _act(name, z)
                self.slopes.append(_dact(name, z, a))
                self.curvs.append(_d2act(name, z, a))
                self.inputs.append(a)
        self.output = self.pre[-1]


def _backward(layers, fp, delta):
    """Pull an output cotangent back to a flat parameter gradient."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (fp.inputs[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * fp.slopes[i - 1]
    return flatten(grads)


def _jvp(layers, tangent, fp):
    """Forward-mode tangents of every pre-activation."""
    dz_all = []
    da = None
    last = len(layers) - 1
    for i, ((W, _), (dW, db)) in enumerate(zip(layers, tangent)):
        dz = fp.inputs[i] @ dW + db
        if da is not None:
            dz += da @ W
        dz_all.append(dz)
        if i < last:
            da = fp.slopes[i] * dz
    return dz_all


def _rop_backward(layers, tangent, fp, dz_all, delta, r_delta):
    """R-operator of the reverse pass: directional derivative of the gradient."""
    out = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        dW, _ = tangent[i]
        a = fp.inputs[i]
        rgW = a.T @ r_delta
        if i > 0:
            ra = fp.slopes[i - 1] * dz_all[i - 1]
            rgW += ra.T @ delta
        out[i] = (rgW, r_delta.sum(axis=0))
        if i > 0:
            back = delta @ W.T
            r_back = r_delta @ W.T + delta @ dW.T
            slope = fp.slopes[i - 1]
            r_delta = r_back * slope
            curv = fp.curvs[i - 1]
            if curv is not None:
                r_delta += back * curv * dz_all[i - 1]
            delta = back * slope
    return flatten(out)


# --- helpers ---------------------------------------------------------------

def _inputs(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(
            f"inputs have shape {X.shape}, network expects width {spec.input_dim}"
        )
    return X


def data_arrays(spec, dataset):
    """Inputs and loss-ready targets of a dataset, rejecting empty data."""
    X = _inputs(spec, dataset.inputs)
    if X.shape[0] == 0:
        raise EmptyDataError("dataset has no rows")
    T = losses.prepare_targets(dataset.targets, spec.loss_kind, spec.output_dim)
    return X, T


def _vector(v, spec):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (spec.n_params,):
        raise ShapeError(f"vector has shape {v.shape}, expected ({spec.n_params},)")
    return v


# --- array-level oracles (used by the objective and solver layers) --------

def outputs(params, spec, X):
    return _Pass(unflatten(params, spec), spec, X).output


def weighted_loss_and_grad(params, spec, X, T, weights=None):
    """``sum_i w_i L_i`` and its parameter gradient (no regularizer)."""
    layers = unflatten(params, spec)
    fp = _Pass(layers, spec, X)
    vals = losses.value(fp.output, T, spec.loss_kind)
    gy = losses.grad(fp.output, T, spec.loss_kind)
    if weights is not None:
        vals = vals * weights
        gy = gy * weights[:, None]
    return float(vals.sum()), _backward(layers, fp, gy)


def weighted_gnh_vp(params, spec, X, v, weights=None):
    """``sum_i w_i J_i^T H_i J_i v`` without damping or regularizer."""
    layers = unflatten(params, spec)
    fp = _Pass(layers, spec, X)
    dy = _jvp(layers, unflatten(v, spec), fp)[-1]
    hv = losses.hess_vp(fp.output, spec.loss_kind, dy)
    if weights is not None:
        hv = hv * weights[:, None]
    return _backward(layers, fp, hv)


def weighted_hvp(params, spec, X, T, v, weights=None):
    """Hessian of ``sum_i w_i L_i`` times ``v`` (no regularizer)."""
    layers = unflatten(params, spec)
    tangent = unflatten(v, spec)
    fp = _Pass(layers, spec, X)
    dz_all = _jvp(layers, tangent, fp)
    gy = losses.grad(fp.output, T, spec.loss_kind)
    r_gy = losses.hess_vp(fp.output, spec.loss_kind, dz_all[-1])
    if weights is not None:
        gy = gy * weights[:, None]
        r_gy = r_gy * weights[:, None]
    return _rop_backward(layers, tangent, fp, dz_all, gy, r_gy)


def jvp_batch(params, spec, X, v):
    """Output tangents ``J_i v`` for every row of ``X``; shape ``(n, m)``."""
    layers = unflatten(params, spec)
    fp = _Pass(layers, spec, X)
    return _jvp(layers, unflatten(v, spec), fp)[-1]


def vjp_batch(params, spec, X, cotangent):
    """``sum_i J_i^T c_i`` for output cotangents ``c`` of shape ``(n, m)``."""
    layers = unflatten(params, spec)
    fp = _Pass(layers, spec, X)
    return _backward(layers, fp, np.asarray(cotangent, dtype=np.float64))


# --- public API ------------------------------------------------------------

def forward(params, spec, inputs):
    """Network outputs for a batch of inputs, shape ``(n, m)``."""
    params = check_params(params, spec)
    return outputs(params, spec, _inputs(spec, inputs))


def cost_and_grad(params, spec, dataset):
    """Mean loss plus ``0.5 * l2 * ||theta||^2`` and its exact gradient."""
    params = check_params(params, spec)
    X, T = data_arrays(spec, dataset)
    n = X.shape[0]
    total, g = weighted_loss_and_grad(params, spec, X, T)
    l2 = spec.l2_strength
    cost = total / n + 0.5 * l2 * float(params @ params)
    return cost, g / n + l2 * params


def hvp(params, spec, dataset, v):
    """Exact Hessian of the cost times ``v`` via the R-operator."""
    params = check_params(params, spec)
    v = _vector(v, spec)
    X, T = data_arrays(spec, dataset)
    return weighted_hvp(params, spec, X, T, v) / X.shape[0] + spec.l2_strength * v


def jvp_outputs(params, spec, x, v):
    """Output Jacobian times ``v`` at a single input ``x``; an ``m``-vector."""
    params = check_params(params, spec)
    v = _vector(v, spec)
    out = jvp_batch(params, spec, _inputs(spec, x), v)
    return out[0] if np.ndim(x) == 1 else out


def output_hessian(y, t, loss_kind):
    """Hessian of the loss with respect to the network output ``y``."""
    return losses.output_hessian(y, t, loss_kind)


def gnh_vp(params, spec, dataset, v, damping=0.0):
    """``(1/N) sum_i J_i^T H_i J_i v + (damping + l2) v``, matrix-free."""
    if damping < 0:
        raise ConfigurationError("damping must be nonnegative")
    params = check_params(params, spec)
    v = _vector(v, spec)
    X, _ = data_arrays(spec, dataset)
    return (
        weighted_gnh_vp(params, spec, X, v) / X.shape[0]
        + (damping + spec.l2_strength) * v
    )


def example_losses(params, spec, inputs, targets):
    """Per-example loss values (no regularizer)."""
    params = check_params(params, spec)
    X = _inputs(spec, inputs)
    T = losses.prepare_targets(targets, spec.loss_kind, spec.output_dim)
    return losses.value(outputs(params, spec, X), T, spec.loss_kind)


def loss_grad(params, spec, inputs, targets):
    """Gradient of the summed (unregularized) loss over the given rows."""
    params = check_params(params, spec)
    X = _inputs(spec, inputs)
    T = losses.prepare_targets(targets, spec.loss_kind, spec.output_dim)
    return weighted_loss_and_grad(params, spec, X, T)[1]


def loss_grad_dots(params, spec, inputs, targets, v):
    """``grad L_i . v`` for every row at once, via one forward-mode pass."""
    params = check_params(params, spec)
    v = _vector(v, spec)
    X = _inputs(spec, inputs)
    T = losses.prepare_targets(targets, spec.loss_kind, spec.output_dim)
    layers = unflatten(params, spec)
    fp = _Pass(layers, spec, X)
    dy = _jvp(layers, unflatten(v, spec), fp)[-1]
    return np.sum(losses.grad(fp.output, T, spec.loss_kind) * dy, axis=1)


def bregman_and_grad(params, spec, X, ref_outputs):
    """``sum_i D(f(theta, x_i), ref_i)`` and its parameter gradient."""
    layers = unflatten(params, spec)
    fp = _Pass(layers, spec, X)
    d = losses.bregman(fp.output, ref_outputs, spec.loss_kind)
    gy = losses.bregman_grad(fp.output, ref_outputs, spec.loss_kind)
    return float(d.sum()), _backward(layers, fp, gy)


class GaussNewtonOperator:
    """Matrix-free ``(1/n) sum_i J_i^T H_i J_i`` at fixed parameters.

    The forward pass over the full data is computed once and reused by
    every full-batch product; minibatch products recompute it on the rows
    they touch.
    """

    def __init__(self, params, spec, X):
        self.params = params
        self.spec = spec
        self.X = X
        self.layers = unflatten(params, spec)
        self._fp = None

    def __call__(self, v):
        if self._fp is None:
            self._fp = _Pass(self.layers, self.spec, self.X)
        fp = self._fp
        dy = _jvp(self.layers, unflatten(v, self.spec), fp)[-1]
        hv = losses.hess_vp(fp.output, self.spec.loss_kind, dy)
        return _backward(self.layers, fp, hv) / self.X.shape[0]

    def on_rows(self, v, idx):
        return weighted_gnh_vp(self.params, self.spec, self.X[idx], v) / len(idx)


class HessianOperator:
    """Matrix-free Hessian of the mean loss at fixed parameters."""

    def __init__(self, params, spec, X, T):
        self.params = params
        self.spec = spec
        self.X = X
        self.T = T

    def __call__(self, v):
        return weighted_hvp(self.params, self.spec, self.X, self.T, v) / self.X.shape[0]

    def on_rows(self, v, idx):
        return weighted_hvp(self.params, self.spec, self.X[idx], self.T[idx], v) / len(idx)
