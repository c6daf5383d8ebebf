"""Decomposing the gap between influence estimates and LOO retraining.

Five terms, each the mean output-space L2 distance on the training set
between adjacent parameter sets of the retraining ladder::

    cold -> warm -> proximal -> pbrf -> linear_pbrf -> influence

Also here: Pearson / Spearman correlation, test-loss correlation tables,
the two-stage LOO estimator, mislabel-detection curves and factor sweeps.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .data import Dataset
from .errors import (
    ConfigurationError,
    DataError,
    EmptyDataError,
    ShapeError,
    TrialError,
    UndefinedCorrelationError,
)
from .influence import InfluenceConfig, InfluenceEngine
from .objectives import ObjectiveKind
from .train import ProtocolConfig, TrainConfig, train, train_base, six_way_protocol

log = logging.getLogger(__name__)

TERMS = (
    "warm_start_gap",
    "proximity_gap",
    "non_convergence_gap",
    "linearization_error",
    "solver_error",
)
LADDER = (
    ("cold", "warm"),
    ("warm", "proximal"),
    ("proximal", "pbrf"),
    ("pbrf", "linear_pbrf"),
    ("linear_pbrf", "influence"),
)
BASELINES = ("cold", "warm", "pbrf", "two_stage_loo")
SCORERS = ("influence_self", "pbrf_self", "random")
FACTORS = ("width", "depth", "epochs", "weight_decay", "damping", "removal_fraction")
DEFAULT_FRACTIONS = tuple(k / 20 for k in range(21))


def _pmap(fn, items, jobs=1):
    """Ordered map, on a thread pool when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def output_distance(theta_a, theta_b, spec, dataset):
    """Mean over rows of ``||f(theta_a, x) - f(theta_b, x)||``."""
    if len(dataset) == 0:
        raise EmptyDataError("dataset has no rows")
    ya = nn.forward(theta_a, spec, dataset.inputs)
    yb = nn.forward(theta_b, spec, dataset.inputs)
    return float(np.mean(np.linalg.norm(ya - yb, axis=1)))


def sample_trials(dataset, n_trials, group_size=1, seed=0):
    """Removed-id tuples, one per trial.

    Single removals draw distinct examples; groups are drawn independently
    per trial.
    """
    n = len(dataset)
    if group_size < 0 or group_size > n:
        raise ConfigurationError(f"group size {group_size} out of range for {n} rows")
    rng = np.random.default_rng(seed)
    ids = np.asarray(dataset.ids)
    if group_size == 1:
        if n_trials > n:
            raise ConfigurationError(f"{n_trials} single-removal trials need as many rows")
        return [(int(i),) for i in ids[rng.choice(n, n_trials, replace=False)]]
    return [
        tuple(int(i) for i in np.sort(ids[rng.choice(n, group_size, replace=False)]))
        for _ in range(n_trials)
    ]


# --- correlation ------------------------------------------------------------

def _pair(xs, ys):
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"lengths differ: {x.size} vs {y.size}")
    if x.size < 3:
        raise UndefinedCorrelationError(f"need at least 3 points, got {x.size}")
    return x, y


def pearson(xs, ys):
    x, y = _pair(xs, ys)
    dx = x - x.mean()
    dy = y - y.mean()
    mx, my = np.max(np.abs(dx)), np.max(np.abs(dy))
    if mx == 0 or my == 0 or not np.isfinite(mx * my):
        raise UndefinedCorrelationError("correlation of a constant input is undefined")
    # rescale first so tiny or huge inputs neither underflow nor overflow
    dx, dy = dx / mx, dy / my
    return float(np.clip((dx @ dy) / np.sqrt((dx @ dx) * (dy @ dy)), -1.0, 1.0))


def average_ranks(xs):
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty(x.size)
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sx[stop] == sx[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop + 1)
        start = stop
    return ranks


def spearman(xs, ys):
    x, y = _pair(xs, ys)
    return pearson(average_ranks(x), average_ranks(y))


# --- decomposition ----------------------------------------------------------

@dataclass(frozen=True)
class TrialResult:
    trial: int
    removed: tuple
    terms: dict
    param_terms: dict
    total: float
    param_total: float


@dataclass(frozen=True)
class DecompositionReport:
    trials: tuple
    metadata: dict = field(default_factory=dict)

    def values(self, term):
        return np.array([t.terms[term] for t in self.trials])

    def mean(self):
        return {k: float(np.mean(self.values(k))) for k in TERMS}

    def std(self):
        return {k: float(np.std(self.values(k))) for k in TERMS}

    def long_rows(self):
        """``(trial, term, value)`` rows in trial-then-term order."""
        return [(t.trial, k, t.terms[k]) for t in self.trials for k in TERMS]

    def aggregates(self):
        mean, std = self.mean(), self.std()
        return {
            "n_trials": len(self.trials),
            "terms": {k: {"mean": mean[k], "std": std[k]} for k in TERMS},
            "param_terms": {
                k: float(np.mean([t.param_terms[k] for t in self.trials])) for k in TERMS
            },
            "metadata": self.metadata,
        }

    def to_json(self):
        return json.dumps(self.aggregates(), indent=2, sort_keys=True)


def decompose(base, dataset, trials, pcfg=None, icfg=None, jobs=1):
    """Five-term decomposition for each removed set in ``trials``."""
    pcfg = pcfg or ProtocolConfig()
    icfg = icfg or InfluenceConfig(epsilon=pcfg.epsilon, damping=pcfg.damping)
    engine = InfluenceEngine(base.theta_s, base.spec, dataset, icfg)
    spec = base.spec

    def one(item):
        k, removed = item
        removed = tuple(int(i) for i in removed)
        sets = six_way_protocol(base, dataset, removed, pcfg, trial=k)
        try:
            est = engine.param_influence(removed)
        except Exception as exc:
            raise TrialError(k, "influence", exc) from exc
        sets["influence"] = base.theta_s + est.delta_params
        terms, pterms = {}, {}
        for name, (a, b) in zip(TERMS, LADDER):
            terms[name] = output_distance(sets[a], sets[b], spec, dataset)
            pterms[name] = float(np.linalg.norm(sets[a] - sets[b]))
        total = output_distance(sets["cold"], sets["influence"], spec, dataset)
        ptotal = float(np.linalg.norm(sets["cold"] - sets["influence"]))
        log.info("trial %d done", k)
        return TrialResult(k, removed, terms, pterms, total, ptotal)

    results = _pmap(one, enumerate(trials), jobs)
    meta = {
        "spec": spec.to_dict(),
        "spec_hash": spec.digest(),
        "epsilon": engine.epsilon,
        "epsilon_convention": "per removed example; gradients summed under one solve",
        "damping": pcfg.damping,
        "solver": icfg.solver,
        "curvature": icfg.curvature,
    }
    return DecompositionReport(tuple(results), meta)


# --- test-loss correlations ---------------------------------------------------

def _warm_run(base, dataset, removed, pcfg):
    kind = ObjectiveKind("warm_downweighted", tuple(removed), pcfg.epsilon)
    cfg = replace(base.config, epochs=pcfg.retrain_budget(base.epochs))
    return train(kind, base.theta_s, cfg, base.spec, dataset, base.epochs, "warm").params


def two_stage_loo(base, dataset, removed, pcfg=None, _reference=None):
    """``theta_s + warm(without removed) - warm(full data)``, same orders."""
    pcfg = pcfg or ProtocolConfig()
    removed = tuple(removed)
    if not removed:
        return base.theta_s.copy()
    ref = _reference if _reference is not None else _warm_run(base, dataset, (), pcfg)
    return base.theta_s + (_warm_run(base, dataset, removed, pcfg) - ref)


@dataclass(frozen=True)
class CorrelationRow:
    baseline: str
    pearson: float
    spearman: float
    n_points: int


@dataclass(frozen=True)
class CorrelationTable:
    rows: tuple
    predicted: np.ndarray
    actual: dict
    pairs: tuple

    def point_rows(self):
        """``(train ids, test id, baseline, predicted, actual)`` per pair."""
        out = []
        for name, vals in self.actual.items():
            for (rem, tid), p, a in zip(self.pairs, self.predicted, vals):
                out.append((rem, tid, name, float(p), float(a)))
        return out


def correlation_table(base, dataset, test, trials, pcfg=None, icfg=None,
                      baselines=BASELINES, sanity=False, jobs=1):
    """Correlate predicted and retrained test-loss deltas.

    Each (trial, test point) pair is one data point: the prediction is the
    test-loss influence of the trial's removed set on that test point, the
    actual value the change of its loss between ``theta_s`` and the
    baseline's parameters. ``sanity`` adds an ``influence`` row whose
    actual values are the predictions themselves.
    """
    pcfg = pcfg or ProtocolConfig()
    icfg = icfg or InfluenceConfig(epsilon=pcfg.epsilon, damping=pcfg.damping)
    for b in baselines:
        if b not in BASELINES:
            raise ConfigurationError(f"unknown baseline {b!r}")
    if not isinstance(test, Dataset) or len(test) == 0:
        raise EmptyDataError("correlation needs at least one test point")
    spec = base.spec
    engine = InfluenceEngine(base.theta_s, spec, dataset, icfg)
    s_tests = np.stack([engine.s_test(test.take([k])) for k in range(len(test))])
    base_loss = nn.example_losses(base.theta_s, spec, test.inputs, test.targets)
    tags = tuple(b for b in baselines if b != "two_stage_loo")
    warm_ref = _warm_run(base, dataset, (), pcfg) if "two_stage_loo" in baselines else None

    def one(item):
        k, removed = item
        removed = tuple(int(i) for i in removed)
        sets = six_way_protocol(base, dataset, removed, pcfg, tags=tags, trial=k) if tags else {}
        if warm_ref is not None:
            try:
                sets["two_stage_loo"] = two_stage_loo(base, dataset, removed, pcfg, warm_ref)
            except Exception as exc:
                raise TrialError(k, "two_stage_loo", exc) from exc
        g = engine.removed_grad(removed)
        pred = engine.epsilon * (s_tests @ g)
        act = {
            b: nn.example_losses(sets[b], spec, test.inputs, test.targets) - base_loss
            for b in baselines
        }
        return pred, act

    results = _pmap(one, enumerate(trials), jobs)
    predicted = np.concatenate([r[0] for r in results])
    actual = {b: np.concatenate([r[1][b] for r in results]) for b in baselines}
    if sanity:
        actual["influence"] = predicted.copy()
    pairs = tuple(
        (tuple(int(i) for i in rem), int(tid)) for rem in trials for tid in test.ids
    )
    rows = tuple(
        CorrelationRow(b, pearson(predicted, a), spearman(predicted, a), predicted.size)
        for b, a in actual.items()
    )
    return CorrelationTable(rows, predicted, actual, pairs)


# --- mislabel detection -------------------------------------------------------

def detection_scores(base, dataset, icfg=None, scorer="influence_self", pcfg=None, seed=0):
    """Per-row scores; higher means more suspicious."""
    if scorer not in SCORERS:
        raise ConfigurationError(f"unknown scorer {scorer!r}")
    n = len(dataset)
    if scorer == "random":
        return np.random.default_rng(seed).random(n)
    if scorer == "influence_self":
        icfg = icfg or InfluenceConfig()
        return InfluenceEngine(base.theta_s, base.spec, dataset, icfg).self_influences()
    pcfg = pcfg or ProtocolConfig()
    before = nn.example_losses(base.theta_s, base.spec, dataset.inputs, dataset.targets)
    out = np.empty(n)
    for k, z in enumerate(dataset.ids):
        theta = six_way_protocol(base, dataset, (int(z),), pcfg, tags=("pbrf",), trial=k)["pbrf"]
        row = dataset.take([k])
        out[k] = nn.example_losses(theta, base.spec, row.inputs, row.targets)[0] - before[k]
    return out


def recovery_curve(scores, dataset, record, fractions=DEFAULT_FRACTIONS):
    """Recall of corrupted rows among the top-``q`` scored rows, per ``q``.

    Ties keep dataset order; the top-``q`` set is the first ``round(q N)``
    ranked rows.
    """
    n = len(dataset)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (n,):
        raise ShapeError(f"expected {n} scores, got shape {scores.shape}")
    bad = set(int(i) for i in record.corrupted_indices)
    if not bad:
        raise DataError("corruption record marks no rows")
    if not bad <= set(int(i) for i in dataset.ids):
        raise DataError("corruption record does not match the dataset ids")
    ranked = np.asarray(dataset.ids)[np.argsort(-scores, kind="stable")]
    hits = np.cumsum([int(i) in bad for i in ranked])
    curve = []
    for q in fractions:
        if not 0.0 <= q <= 1.0:
            raise ConfigurationError(f"fraction {q} outside [0, 1]")
        k = int(round(q * n))
        curve.append((float(q), float(hits[k - 1]) / len(bad) if k else 0.0))
    return curve


def mislabel_detection_curve(base, dataset, record, icfg=None, scorer="influence_self",
                             pcfg=None, fractions=DEFAULT_FRACTIONS, seed=0):
    scores = detection_scores(base, dataset, icfg, scorer, pcfg, seed)
    return recovery_curve(scores, dataset, record, fractions)


# --- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSetup:
    """Everything one decomposition run needs; the unit a sweep varies."""

    dataset: Dataset
    spec: nn.NetworkSpec
    train: TrainConfig
    protocol: ProtocolConfig = ProtocolConfig()
    influence: InfluenceConfig = InfluenceConfig()
    n_trials: int = 20
    trial_seed: int = 0
    init_seed: int | None = None
    group_size: int = 1


@dataclass(frozen=True)
class SweepPoint:
    factor: str
    value: float
    report: DecompositionReport | None
    error: str | None = None


def run_decomposition(setup, jobs=1):
    base = train_base(setup.spec, setup.dataset, setup.train, setup.init_seed)
    trials = sample_trials(setup.dataset, setup.n_trials, setup.group_size, setup.trial_seed)
    return decompose(base, setup.dataset, trials, setup.protocol, setup.influence, jobs)


def apply_factor(setup, factor, value):
    """Copy of ``setup`` with one factor set to ``value``."""
    spec = setup.spec
    hidden = spec.layer_widths[1:-1]
    act = spec.hidden_activations[0] if spec.hidden_activations else "relu"
    if factor == "width":
        widths = (spec.input_dim,) + (int(value),) * len(hidden) + (spec.output_dim,)
        return replace(setup, spec=replace(spec, layer_widths=widths, activation=act))
    if factor == "depth":
        w = hidden[0] if hidden else spec.input_dim
        widths = (spec.input_dim,) + (w,) * int(value) + (spec.output_dim,)
        return replace(setup, spec=replace(spec, layer_widths=widths, activation=act))
    if factor == "epochs":
        return replace(setup, train=replace(setup.train, epochs=int(value)))
    if factor == "weight_decay":
        return replace(setup, spec=replace(spec, l2_strength=float(value)))
    if factor == "damping":
        return replace(
            setup,
            protocol=replace(setup.protocol, damping=float(value)),
            influence=replace(setup.influence, damping=float(value)),
        )
    if factor == "removal_fraction":
        return replace(setup, group_size=max(1, int(round(float(value) * len(setup.dataset)))))
    raise ConfigurationError(f"unknown sweep factor {factor!r}")


def factor_sweep(factor, grid, setup, jobs=1):
    """One decomposition per grid value; failures are recorded, not raised."""
    if factor not in FACTORS:
        raise ConfigurationError(f"unknown sweep factor {factor!r}")
    grid = list(grid)
    if not grid:
        raise ConfigurationError("sweep grid is empty")

    def one(value):
        try:
            return SweepPoint(factor, value, run_decomposition(apply_factor(setup, factor, value)))
        except Exception as exc:
            log.warning("sweep %s=%s failed: %s", factor, value, exc)
            return SweepPoint(factor, value, None, f"{type(exc).__name__}: {exc}")

    return _pmap(one, grid, jobs)


def sweep_long_rows(points):
    """``(factor, value, trial, term, value)`` rows for every successful point."""
    rows = []
    for p in points:
        if p.report is None:
            continue
        for trial, term, v in p.report.long_rows():
            rows.append((p.factor, p.value, trial, term, v))
    return rows


def sweep_trend(points, term):
    """Spearman correlation between the factor value and a term's mean."""
    ok = [p for p in points if p.report is not None]
    return spearman([p.value for p in ok], [p.report.mean()[term] for p in ok])
