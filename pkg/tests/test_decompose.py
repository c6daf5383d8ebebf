import numpy as np
import pytest
import scipy.stats
from hypothesis import given, strategies as st

from influence_audit import data, decompose as D, nn
from influence_audit.errors import (
    ConfigurationError,
    DataError,
    EmptyDataError,
    ShapeError,
    UndefinedCorrelationError,
)
from influence_audit.influence import InfluenceConfig
from influence_audit.train import ProtocolConfig, TrainConfig, train_base

LR_TRAIN = TrainConfig(optimizer="gd", learning_rate=1.0, momentum=0.9, epochs=3000, grad_tol=1e-9)


@pytest.fixture(scope="module")
def lr_setup():
    ds = data.synth_classification(430, 6, 2, seed=5, separation=2.0)
    train_ds, test = data.split(ds, 400)
    spec = nn.NetworkSpec((6, 1), activation=(), loss_kind="binary_cross_entropy", l2_strength=0.01)
    base = train_base(spec, train_ds, LR_TRAIN)
    return spec, train_ds, test, base


# --- output distance -------------------------------------------------------

def test_output_distance_example():
    spec = nn.NetworkSpec((1, 1), activation=())
    ds = data.Dataset(np.array([[1.0], [2.0]]), np.zeros(2), np.arange(2))
    a = np.array([1.0, 0.0])
    b = np.array([2.0, 0.0])
    assert D.output_distance(a, b, spec, ds) == pytest.approx(1.5)
    assert D.output_distance(b, a, spec, ds) == pytest.approx(1.5)
    assert D.output_distance(a, a, spec, ds) == 0.0


def test_output_distance_empty():
    spec = nn.NetworkSpec((1, 1), activation=())
    empty = data.Dataset(np.zeros((0, 1)), np.zeros(0), np.zeros(0, dtype=int))
    with pytest.raises(EmptyDataError):
        D.output_distance(np.zeros(2), np.ones(2), spec, empty)


def test_output_distance_triangle(small_mlp, rng):
    spec, ds, _ = small_mlp
    a, b, c = (rng.normal(size=spec.n_params) for _ in range(3))
    ab = D.output_distance(a, b, spec, ds)
    bc = D.output_distance(b, c, spec, ds)
    ac = D.output_distance(a, c, spec, ds)
    assert ac <= ab + bc + 1e-12


# --- correlation -----------------------------------------------------------

def test_correlation_examples():
    assert D.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert D.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert D.spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert D.spearman([1, 2, 3, 4], [1, 8, 27, 64]) == pytest.approx(1.0)


def test_correlation_errors():
    with pytest.raises(UndefinedCorrelationError):
        D.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        D.spearman([1, 2], [1, 2])
    with pytest.raises(ShapeError):
        D.pearson([1, 2, 3], [1, 2])


def test_average_ranks_ties():
    np.testing.assert_array_equal(D.average_ranks([3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0])


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=40))
def test_correlations_match_scipy(pairs):
    x, y = np.array(pairs).T
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        with pytest.raises(UndefinedCorrelationError):
            D.pearson(x, y)
        return
    r = D.pearson(x, y)
    rho = D.spearman(x, y)
    assert -1.0 <= r <= 1.0 and -1.0 <= rho <= 1.0
    ref = scipy.stats.pearsonr(x, y)[0]
    if np.isfinite(ref):
        assert r == pytest.approx(ref, abs=1e-9)
    assert rho == pytest.approx(scipy.stats.spearmanr(x, y)[0], abs=1e-9)


@given(st.lists(st.tuples(st.integers(-1000, 1000), finite), min_size=3, max_size=30,
                unique_by=lambda t: t[0]))
def test_spearman_invariant_to_monotone_maps(pairs):
    x, y = np.array(pairs, dtype=np.float64).T
    if np.ptp(y) == 0:
        return
    rho = D.spearman(x, y)
    assert D.spearman(x**3 + x - 7.0, y) == pytest.approx(rho, abs=1e-12)


# --- trials ------------------------------------------------------------------

def test_sample_trials():
    ds = data.synth_regression(30, 2, seed=0)
    singles = D.sample_trials(ds, 10, seed=3)
    assert len({t[0] for t in singles}) == 10 and all(len(t) == 1 for t in singles)
    assert singles == D.sample_trials(ds, 10, seed=3)
    groups = D.sample_trials(ds, 4, group_size=5, seed=3)
    assert all(len(set(g)) == 5 for g in groups)
    with pytest.raises(ConfigurationError):
        D.sample_trials(ds, 31)
    with pytest.raises(ConfigurationError):
        D.sample_trials(ds, 2, group_size=31)


# --- decomposition -----------------------------------------------------------

def test_logistic_decomposition_small(lr_setup):
    spec, ds, _, base = lr_setup
    pc = ProtocolConfig(damping=0.0)
    trials = D.sample_trials(ds, 3, seed=1)
    rep = D.decompose(base, ds, trials, pc, InfluenceConfig(damping=0.0))
    for t in rep.trials:
        for k in D.TERMS:
            assert t.terms[k] <= 1e-2, (t.removed, k, t.terms[k])
        assert t.total <= sum(t.terms.values()) + 1e-12
    assert len(rep.long_rows()) == 3 * len(D.TERMS)
    agg = rep.aggregates()
    assert agg["n_trials"] == 3 and set(agg["terms"]) == set(D.TERMS)
    assert rep.metadata["epsilon"] == pytest.approx(1 / len(ds))


def test_empty_removal_with_zero_epsilon(lr_setup):
    spec, ds, _, base = lr_setup
    pc = ProtocolConfig(damping=0.0, epsilon=0.0)
    rep = D.decompose(base, ds, [()], pc, InfluenceConfig(epsilon=0.0, damping=0.0))
    for k in D.TERMS:
        assert rep.trials[0].terms[k] <= 1e-6
    assert rep.trials[0].terms["warm_start_gap"] == 0.0


def test_triangle_bound_on_mlp():
    ds = data.synth_classification(60, 3, 3, seed=2)
    spec = nn.NetworkSpec((3, 8, 3), activation="tanh", loss_kind="softmax_cross_entropy", l2_strength=1e-3)
    base = train_base(spec, ds, TrainConfig(optimizer="sgd", learning_rate=0.3, batch_size=16, epochs=20))
    pc = ProtocolConfig(damping=0.01, bregman_lr_factor=1.0)
    rep = D.decompose(base, ds, D.sample_trials(ds, 2, seed=0), pc, InfluenceConfig(damping=0.01))
    for t in rep.trials:
        assert t.total <= sum(t.terms.values()) + 1e-12
        assert t.param_total <= sum(t.param_terms.values()) + 1e-12
        assert all(v >= 0 for v in t.terms.values())


def test_two_stage_loo(lr_setup):
    spec, ds, _, base = lr_setup
    pc = ProtocolConfig(damping=0.0)
    out = D.two_stage_loo(base, ds, (), pc)
    np.testing.assert_array_equal(out, base.theta_s)
    z = (int(ds.ids[7]),)
    two = D.two_stage_loo(base, ds, z, pc)
    warm = D._warm_run(base, ds, z, pc)
    assert np.linalg.norm(two - warm) <= 1e-6


def test_correlation_table(lr_setup):
    spec, ds, test, base = lr_setup
    pc = ProtocolConfig(damping=0.0)
    trials = D.sample_trials(ds, 4, seed=2)
    tab = D.correlation_table(base, ds, test.take(range(3)), trials, pc,
                              InfluenceConfig(damping=0.0), baselines=("warm", "two_stage_loo"),
                              sanity=True)
    names = [r.baseline for r in tab.rows]
    assert names == ["warm", "two_stage_loo", "influence"]
    sanity = tab.rows[-1]
    assert sanity.pearson == pytest.approx(1.0) and sanity.spearman == pytest.approx(1.0)
    assert all(r.n_points == 12 for r in tab.rows)
    assert len(tab.point_rows()) == 3 * 12
    for r in tab.rows[:2]:
        assert r.pearson >= 0.95 and r.spearman >= 0.95
    with pytest.raises(ConfigurationError):
        D.correlation_table(base, ds, test, trials, pc, baselines=("nope",))
    with pytest.raises(EmptyDataError):
        D.correlation_table(base, ds, test.take([]), trials, pc)


# --- mislabel detection -------------------------------------------------------

@pytest.fixture(scope="module")
def corrupted():
    ds = data.synth_classification(400, 5, 3, seed=1)
    bad, rec = data.corrupt_labels(ds, 0.1, seed=2)
    return bad, rec


def test_random_curve_is_near_diagonal(corrupted):
    bad, rec = corrupted
    curves = [
        D.recovery_curve(np.random.default_rng(s).random(len(bad)), bad, rec) for s in range(20)
    ]
    mean = np.mean([[r for _, r in c] for c in curves], axis=0)
    qs = np.array(D.DEFAULT_FRACTIONS)
    assert np.max(np.abs(mean - qs)) <= 0.1


def test_curve_shape(corrupted):
    bad, rec = corrupted
    curve = D.recovery_curve(np.random.default_rng(0).random(len(bad)), bad, rec)
    rates = [r for _, r in curve]
    assert rates[0] == 0.0 and rates[-1] == 1.0
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_oracle_scores_recover_everything(corrupted):
    bad, rec = corrupted
    scores = np.isin(bad.ids, list(rec.corrupted_indices)).astype(float)
    curve = dict(D.recovery_curve(scores, bad, rec))
    assert curve[0.1] == 1.0


def test_curve_errors(corrupted):
    bad, rec = corrupted
    with pytest.raises(ShapeError):
        D.recovery_curve(np.zeros(3), bad, rec)
    clean = data.CorruptionRecord(frozenset(), {}, 0, 0.0)
    with pytest.raises(DataError):
        D.recovery_curve(np.zeros(len(bad)), bad, clean)
    foreign = data.CorruptionRecord(frozenset({10_000}), {10_000: 0}, 0, 0.1)
    with pytest.raises(DataError):
        D.recovery_curve(np.zeros(len(bad)), bad, foreign)


def test_influence_scorer_beats_random(corrupted):
    bad, rec = corrupted
    spec = nn.NetworkSpec((5, 3), activation=(), loss_kind="softmax_cross_entropy", l2_strength=0.01)
    base = train_base(spec, bad, TrainConfig(optimizer="gd", learning_rate=1.0, momentum=0.9, epochs=500))
    inf = dict(D.mislabel_detection_curve(base, bad, rec))
    rnd = dict(D.mislabel_detection_curve(base, bad, rec, scorer="random", seed=0))
    assert inf[0.2] > rnd[0.2]
    with pytest.raises(ConfigurationError):
        D.detection_scores(base, bad, scorer="loss")


# --- sweeps --------------------------------------------------------------------

def _tiny_setup():
    ds = data.synth_classification(40, 3, 2, seed=0)
    spec = nn.NetworkSpec((3, 4, 2), activation="tanh", loss_kind="softmax_cross_entropy", l2_strength=1e-3)
    return D.ExperimentSetup(
        ds, spec, TrainConfig(optimizer="gd", learning_rate=0.5, epochs=10),
        ProtocolConfig(damping=0.01), InfluenceConfig(damping=0.01), n_trials=2,
    )


def test_apply_factor():
    s = _tiny_setup()
    assert D.apply_factor(s, "width", 16).spec.layer_widths == (3, 16, 2)
    assert D.apply_factor(s, "depth", 3).spec.layer_widths == (3, 4, 4, 4, 2)
    assert D.apply_factor(s, "epochs", 7).train.epochs == 7
    assert D.apply_factor(s, "weight_decay", 0.5).spec.l2_strength == 0.5
    d = D.apply_factor(s, "damping", 0.2)
    assert d.protocol.damping == 0.2 and d.influence.damping == 0.2
    assert D.apply_factor(s, "removal_fraction", 0.1).group_size == 4
    with pytest.raises(ConfigurationError):
        D.apply_factor(s, "colour", 1)


def test_factor_sweep_records_failures():
    s = _tiny_setup()
    pts = D.factor_sweep("width", [2, 4, 0], s)
    assert [p.value for p in pts] == [2, 4, 0]
    assert pts[0].report is not None and pts[1].report is not None
    assert pts[2].report is None and pts[2].error
    rows = D.sweep_long_rows(pts)
    assert len(rows) == 2 * 2 * len(D.TERMS)
    assert rows[0][:2] == ("width", 2)
    with pytest.raises(ConfigurationError):
        D.factor_sweep("colour", [1], s)
    with pytest.raises(ConfigurationError):
        D.factor_sweep("width", [], s)
