"""Independent reference computations used only by the tests.

Nothing here calls the package's derivative code: gradients and
Jacobians come from central finite differences, linear models from
closed-form normal equations, and network outputs from a straight-line
re-evaluation of the layer algebra.
"""

import numpy as np


def layers_of(params, widths):
    """Split a flat vector by the documented layout: per layer W (row-major), then b."""
    out, k = [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = params[k: k + fan_in * fan_out].reshape(fan_in, fan_out)
        k += fan_in * fan_out
        b = params[k: k + fan_out]
        k += fan_out
        out.append((W, b))
    assert k == params.size
    return out


def straight_forward(params, widths, act, X):
    h = np.atleast_2d(np.asarray(X, dtype=float))
    layers = layers_of(params, widths)
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else act(z)
    return h


def fd_grad(f, theta, h=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def fd_jacobian(f, theta, h=1e-6):
    """Jacobian of a vector-valued ``f`` by central differences; shape (out, d)."""
    cols = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((np.ravel(f(theta + e)) - np.ravel(f(theta - e))) / (2 * h))
    return np.stack(cols, axis=1)


def softmax(y):
    e = np.exp(y - y.max())
    return e / e.sum()


def loss_hessian(y, kind):
    if kind == "squared_error":
        return np.eye(y.size)
    if kind == "binary_cross_entropy":
        s = 1.0 / (1.0 + np.exp(-y))
        return np.diag(s * (1 - s))
    p = softmax(y)
    return np.diag(p) - np.outer(p, p)


def explicit_gnh(params, forward_one, X, kind):
    """``(1/N) sum_i J_i^T H_i J_i`` from finite-difference Jacobians."""
    d = params.size
    G = np.zeros((d, d))
    for x in X:
        J = fd_jacobian(lambda th: forward_one(th, x), params)
        H = loss_hessian(np.ravel(forward_one(params, x)), kind)
        G += J.T @ H @ J
    return G / len(X)


def design(X):
    """Design matrix of an identity network: features then a ones column (bias last)."""
    X = np.asarray(X, dtype=float)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def ridge_solution(X, t, l2):
    """Minimizer of ``mean 1/2 (A th - t)^2 + l2/2 ||th||^2`` with ``A = design(X)``."""
    A = design(X)
    n = A.shape[0]
    return np.linalg.solve(A.T @ A / n + l2 * np.eye(A.shape[1]), A.T @ np.ravel(t) / n)


def pearson_ref(x, y):
    x = np.asarray(x, float) - np.mean(x)
    y = np.asarray(y, float) - np.mean(y)
    return float(x @ y / np.sqrt((x @ x) * (y @ y)))
