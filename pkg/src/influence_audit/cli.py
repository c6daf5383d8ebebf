"""Command-line front end: ``influence-audit {run,tune-lissa,validate}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error. The
``INFLUENCE_AUDIT_LOG`` environment variable sets log verbosity
(``error``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__, decompose as dec, io, nn, solvers
from .config import build_datasets, load_config
from .errors import ConfigurationError, InfluenceAuditError
from .influence import InfluenceEngine
from .train import train_base

log = logging.getLogger("influence_audit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MANIFEST_VERSION = 1
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    name = os.environ.get("INFLUENCE_AUDIT_LOG", "error").strip().lower()
    logging.basicConfig(
        level=_LEVELS.get(name, logging.ERROR),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _test_points(cfg, test):
    ex = cfg.experiment
    if ex.test_ids is not None:
        return test.take(test.positions(ex.test_ids))
    k = min(ex.n_test_points, len(test))
    rng = np.random.default_rng([ex.seed, 1])
    return test.take(np.sort(rng.choice(len(test), k, replace=False)))


def _setup(cfg, train_ds):
    return dec.ExperimentSetup(
        train_ds,
        cfg.network_spec(),
        cfg.train_config(),
        cfg.protocol_config(),
        cfg.influence_config(),
        cfg.experiment.trials,
        cfg.experiment.seed,
        cfg.model.init_seed,
        cfg.experiment.group_size,
    )


def _trials(cfg, train_ds):
    ex = cfg.experiment
    return dec.sample_trials(train_ds, ex.trials, ex.group_size, ex.seed)


def _write_report(out, report, stem="decomposition"):
    files = [
        io.write_csv(out / f"{stem}.csv", dec.TERMS, [[t.terms[k] for k in dec.TERMS] for t in report.trials]),
        io.write_csv(out / f"{stem}_long.csv", ("trial", "term", "value"), report.long_rows()),
        io.write_csv(
            out / f"{stem}_trials.csv",
            ("trial", "removed", "cold_to_influence", "param_cold_to_influence")
            + tuple(f"param_{k}" for k in dec.TERMS),
            [
                (t.trial, t.removed, t.total, t.param_total) + tuple(t.param_terms[k] for k in dec.TERMS)
                for t in report.trials
            ],
        ),
        io.write_json(out / f"{stem}.json", report.aggregates()),
    ]
    return files


def _mode_decompose(cfg, out, jobs, train_ds, test_ds, record):
    setup = _setup(cfg, train_ds)
    base = train_base(setup.spec, train_ds, setup.train, setup.init_seed)
    io.save_params(out / "params" / "base.bin", base.theta_s, setup.spec, {"init_seed": setup.init_seed})
    report = dec.decompose(base, train_ds, _trials(cfg, train_ds), setup.protocol, setup.influence, jobs)
    return _write_report(out, report)


def _mode_correlate(cfg, out, jobs, train_ds, test_ds, record):
    setup = _setup(cfg, train_ds)
    base = train_base(setup.spec, train_ds, setup.train, setup.init_seed)
    io.save_params(out / "params" / "base.bin", base.theta_s, setup.spec, {"init_seed": setup.init_seed})
    ex = cfg.experiment
    table = dec.correlation_table(
        base, train_ds, _test_points(cfg, test_ds), _trials(cfg, train_ds),
        setup.protocol, setup.influence, tuple(ex.baselines), ex.sanity, jobs,
    )
    return [
        io.write_csv(
            out / "correlation.csv", ("baseline", "pearson", "spearman", "n_points"),
            [(r.baseline, r.pearson, r.spearman, r.n_points) for r in table.rows],
        ),
        io.write_csv(
            out / "correlation_points.csv", ("removed", "test_id", "baseline", "predicted", "actual"),
            table.point_rows(),
        ),
    ]


def _mode_sweep(cfg, out, jobs, train_ds, test_ds, record):
    sw = cfg.experiment.sweep
    points = dec.factor_sweep(sw.factor, sw.grid, _setup(cfg, train_ds), jobs)
    summary = [
        {
            "factor": p.factor,
            "value": p.value,
            "error": p.error,
            "aggregates": None if p.report is None else p.report.aggregates(),
        }
        for p in points
    ]
    return [
        io.write_csv(
            out / "sweep.csv", ("factor", "factor_value", "trial", "term", "value"),
            dec.sweep_long_rows(points),
        ),
        io.write_json(out / "sweep.json", summary),
    ]


def _mode_mislabel(cfg, out, jobs, train_ds, test_ds, record):
    setup = _setup(cfg, train_ds)
    base = train_base(setup.spec, train_ds, setup.train, setup.init_seed)
    io.save_params(out / "params" / "base.bin", base.theta_s, setup.spec, {"init_seed": setup.init_seed})
    ex = cfg.experiment
    scores = dec.detection_scores(base, train_ds, setup.influence, ex.scorer, setup.protocol, ex.seed)
    curve = dec.recovery_curve(scores, train_ds, record, ex.fractions)
    bad = record.corrupted_indices
    return [
        io.write_csv(out / "mislabel_curve.csv", ("fraction_inspected", "fraction_recovered"), curve),
        io.write_csv(
            out / "mislabel_scores.csv", ("train_id", "score", "corrupted"),
            [(int(i), float(s), int(int(i) in bad)) for i, s in zip(train_ds.ids, scores)],
        ),
    ]


def _mode_scores(cfg, out, jobs, train_ds, test_ds, record):
    setup = _setup(cfg, train_ds)
    base = train_base(setup.spec, train_ds, setup.train, setup.init_seed)
    io.save_params(out / "params" / "base.bin", base.theta_s, setup.spec, {"init_seed": setup.init_seed})
    engine = InfluenceEngine(base.theta_s, setup.spec, train_ds, setup.influence)
    test = _test_points(cfg, test_ds)
    rows = []
    for k, tid in enumerate(test.ids):
        scores = engine.train_scores(engine.s_test(test.take([k])))
        rows.extend((int(z), int(tid), float(s)) for z, s in zip(train_ds.ids, scores))
    return [io.write_scores(out / "scores.csv", rows, setup.influence, engine.epsilon)]


MODE_RUNNERS = {
    "decompose": _mode_decompose,
    "correlate": _mode_correlate,
    "sweep": _mode_sweep,
    "mislabel": _mode_mislabel,
    "influence-scores": _mode_scores,
}


def _manifest(cfg, status, outputs=None, extra=None):
    spec = cfg.network_spec()
    m = {
        "manifest_version": MANIFEST_VERSION,
        "version": __version__,
        "status": status,
        "config": cfg.model_dump(mode="json"),
        "seeds": cfg.seeds(),
        "spec_hash": spec.digest(),
        "mode": cfg.experiment.mode,
    }
    if outputs is not None:
        m["outputs"] = outputs
    m.update(extra or {})
    return m


def _resolve(args):
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    out = Path(args.out or cfg.output_dir or "influence_audit_out")
    return cfg, out


def _run_guarded(args, body):
    try:
        cfg, out = _resolve(args)
    except (ValidationError, ConfigurationError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    try:
        outputs, extra = body(cfg, out)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures keep partial artifacts
        log.debug("run failed", exc_info=True)
        marker.write_text(f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")
        io.write_json(out / "manifest.json", _manifest(cfg, "failed", extra={"error": str(exc)}))
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    io.write_json(out / "manifest.json", _manifest(cfg, "ok", outputs, extra))
    return EXIT_OK


def cmd_run(args):
    def body(cfg, out):
        train_ds, test_ds, record = build_datasets(cfg)
        files = MODE_RUNNERS[cfg.experiment.mode](cfg, out, args.jobs, train_ds, test_ds, record)
        return {Path(f).relative_to(out).as_posix(): io.file_digest(f) for f in files}, {}

    return _run_guarded(args, body)


def cmd_tune_lissa(args):
    def body(cfg, out):
        if cfg.influence.solver != "lissa":
            raise ConfigurationError("tune-lissa needs influence.solver = 'lissa'")
        train_ds, _, _ = build_datasets(cfg)
        spec = cfg.network_spec()
        icfg = cfg.influence_config()
        base = train_base(spec, train_ds, cfg.train_config(), cfg.model.init_seed)
        op = solvers.curvature_operator(base.theta_s, spec, train_ds, icfg.curvature, icfg.damping)
        probe = np.random.default_rng([icfg.seed, 2]).normal(size=spec.n_params)
        scale, residuals = solvers.tune_lissa_scale(
            op, probe, tuple(cfg.influence.lissa_grid), icfg.lissa_depth, cfg.influence.lissa_tune_tol,
            repeats=icfg.lissa_repeats, seed=icfg.seed, batch_size=icfg.lissa_batch_size,
        )
        scale = float(scale)
        print(scale)
        # a diverged scale is recorded as null so the manifest stays strict JSON
        table = {repr(float(k)): (v if np.isfinite(v) else None) for k, v in residuals.items()}
        return {}, {"lissa_scale": scale, "lissa_residuals": table}

    return _run_guarded(args, body)


def cmd_validate(args):
    try:
        cfg, _ = _resolve(args)
    except (ValidationError, ConfigurationError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: mode={cfg.experiment.mode} params={cfg.network_spec().n_params}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="influence-audit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (
        ("run", cmd_run, "run the experiment a config describes"),
        ("tune-lissa", cmd_tune_lissa, "pick the LiSSA scale from the configured grid"),
        ("validate", cmd_validate, "check a config without running it"),
    ):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", required=True, help="experiment config or run manifest (JSON)")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads")
        sp.add_argument("--seed-override", type=int, help="replace every seed in the config")
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except InfluenceAuditError as exc:  # pragma: no cover - defensive
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
