import numpy as np
import pytest

from influence_audit import data, nn
from influence_audit.errors import ConfigurationError
from influence_audit.objectives import (
    TAGS,
    Objective,
    ObjectiveKind,
    evaluate_objective,
    gradient_of_objective,
)

import oracles


@pytest.fixture(params=["squared_error", "softmax_cross_entropy", "binary_cross_entropy"])
def setup(request):
    kind = request.param
    m = {"squared_error": 2, "softmax_cross_entropy": 3, "binary_cross_entropy": 1}[kind]
    spec = nn.NetworkSpec((3, 4, m), activation="tanh", loss_kind=kind, l2_strength=0.02)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(9, 3))
    if kind == "softmax_cross_entropy":
        ds = data.Dataset(X, rng.integers(0, m, 9), np.arange(9) + 100, m)
    elif kind == "binary_cross_entropy":
        ds = data.Dataset(X, rng.integers(0, 2, 9), np.arange(9) + 100, 2)
    else:
        ds = data.Dataset(X, rng.normal(size=(9, m)), np.arange(9) + 100)
    anchor = nn.init_params(spec, 1)
    return spec, ds, anchor


def kinds(anchor, eps=None, removed=(101, 104), lam=0.3):
    return [ObjectiveKind(t, removed, eps, lam, anchor) for t in TAGS]


def test_unknown_tag_and_missing_anchor(setup):
    spec, ds, _ = setup
    with pytest.raises(ConfigurationError):
        ObjectiveKind("newton")
    with pytest.raises(ConfigurationError):
        ObjectiveKind("proximal", damping=-1.0)
    for tag in ("proximal", "proximal_bregman", "linearized_proximal_bregman"):
        with pytest.raises(ConfigurationError):
            evaluate_objective(ObjectiveKind(tag, (101,)), np.zeros(spec.n_params), spec, ds)


def test_gradients_match_finite_differences(setup):
    spec, ds, anchor = setup
    theta = anchor + np.random.default_rng(3).normal(scale=0.5, size=spec.n_params)
    for kind in kinds(anchor):
        g = gradient_of_objective(kind, theta, spec, ds)
        fd = oracles.fd_grad(lambda th: evaluate_objective(kind, th, spec, ds), theta)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() <= 1e-5, kind.tag


def test_cold_with_zero_epsilon_is_training_cost(setup):
    spec, ds, anchor = setup
    kind = ObjectiveKind("cold_downweighted", (101,), epsilon=0.0)
    assert evaluate_objective(kind, anchor, spec, ds) == pytest.approx(nn.cost_and_grad(anchor, spec, ds)[0], rel=1e-14)


def test_full_removal_weight_drops_the_row(setup):
    spec, ds, anchor = setup
    kind = ObjectiveKind("warm_downweighted", (101, 104))
    rest = data.remove_examples(ds, [101, 104])
    expected = nn.cost_and_grad(anchor, spec, rest)[0] - 0.5 * spec.l2_strength * anchor @ anchor
    expected = expected * len(rest) / len(ds) + 0.5 * spec.l2_strength * anchor @ anchor
    assert evaluate_objective(kind, anchor, spec, ds) == pytest.approx(expected, rel=1e-12)


def test_pbrf_zero_and_stationary_at_anchor(setup):
    spec, ds, anchor = setup
    kind = ObjectiveKind("proximal_bregman", (101,), epsilon=0.0, damping=0.1, anchor=anchor)
    assert evaluate_objective(kind, anchor, spec, ds) == pytest.approx(0.0, abs=1e-15)
    assert np.linalg.norm(gradient_of_objective(kind, anchor, spec, ds)) <= 1e-10
    lin = ObjectiveKind("linearized_proximal_bregman", (101,), epsilon=0.0, damping=0.1, anchor=anchor)
    assert evaluate_objective(lin, anchor, spec, ds) == 0.0
    assert np.linalg.norm(gradient_of_objective(lin, anchor, spec, ds)) <= 1e-12


def test_squared_error_bregman_term_by_hand():
    spec = nn.NetworkSpec((2, 3, 2), activation="relu", loss_kind="squared_error")
    ds = data.synth_regression(7, 2, seed=0, n_outputs=2)
    anchor = nn.init_params(spec, 0)
    theta = nn.init_params(spec, 1)
    obj = Objective(ObjectiveKind("proximal_bregman", (), damping=0.0, anchor=anchor), spec, ds)
    d = nn.forward(theta, spec, ds.inputs) - nn.forward(anchor, spec, ds.inputs)
    assert obj.bregman_term(theta) == pytest.approx(np.mean(0.5 * np.sum(d ** 2, axis=1)), rel=1e-13)


def test_proximity_term_gradient_is_exact(setup):
    spec, ds, anchor = setup
    theta = anchor + 0.1
    g0 = gradient_of_objective(ObjectiveKind("proximal", (101,), None, 0.0, anchor), theta, spec, ds)
    g1 = gradient_of_objective(ObjectiveKind("proximal", (101,), None, 0.7, anchor), theta, spec, ds)
    np.testing.assert_allclose(g1 - g0, 0.7 * (theta - anchor), rtol=1e-12, atol=1e-15)


def test_bregman_term_nonnegative_and_objective_bounded(setup):
    spec, ds, anchor = setup
    rng = np.random.default_rng(8)
    kind = ObjectiveKind("proximal_bregman", (101,), None, 0.1, anchor)
    obj = Objective(kind, spec, ds)
    ref = nn.example_losses
    for _ in range(20):
        theta = anchor + rng.normal(scale=2.0, size=spec.n_params)
        assert obj.bregman_term(theta) >= 0.0
        loss_z = ref(theta, spec, ds.inputs[1:2], ds.targets[1:2])[0]
        assert obj.value(theta) >= -obj.epsilon * loss_z - 1e-12


def test_linearized_objective_is_quadratic(setup):
    spec, ds, anchor = setup
    kind = ObjectiveKind("linearized_proximal_bregman", (101, 102), None, 0.2, anchor)
    rng = np.random.default_rng(2)
    a, d = rng.normal(size=(2, spec.n_params))
    g = lambda t: gradient_of_objective(kind, anchor + a + t * d, spec, ds)
    g0, g1, g2 = g(0.0), g(1.0), g(2.5)
    # affine gradient: the three points are collinear
    np.testing.assert_allclose(g2 - g0, 2.5 * (g1 - g0), rtol=1e-10, atol=1e-12)


def test_linearized_matches_second_order_expansion(setup):
    spec, ds, anchor = setup
    kind = ObjectiveKind("linearized_proximal_bregman", (), None, 0.0, anchor)
    pb = ObjectiveKind("proximal_bregman", (), None, 0.0, anchor)
    d = np.random.default_rng(4).normal(size=spec.n_params)
    gaps = []
    for h in (1e-2, 1e-3):
        lin = evaluate_objective(kind, anchor + h * d, spec, ds)
        full = evaluate_objective(pb, anchor + h * d, spec, ds)
        gaps.append(abs(lin - full))
    # the two agree to second order, so the gap shrinks at least like h^3
    assert gaps[1] <= gaps[0] / 500


def test_minibatch_estimates_average_to_full(setup):
    spec, ds, anchor = setup
    theta = anchor + 0.05
    for kind in kinds(anchor):
        obj = Objective(kind, spec, ds)
        full_v, full_g = obj.batch_value_and_grad(theta)
        idx = np.arange(len(ds))
        v, g = obj.batch_value_and_grad(theta, idx)
        assert v == pytest.approx(full_v, rel=1e-13)
        np.testing.assert_allclose(g, full_g, rtol=1e-12, atol=1e-15)
