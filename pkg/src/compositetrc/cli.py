"""Command-line interface: ``simulate``, ``cv``, ``fit``, ``predict``, ``evaluate``.

Exit statuses: 0 success, 2 configuration error, 3 data error, 4 numerical
error. On failure a one-line JSON object ``{"error": <category>, "message": ...}``
is written to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .data import Dataset, make_queries
from .estimators import ESTIMATORS, make_estimator
from .exceptions import ConfigError, DataValidationError, TRCError
from .metrics import compute_metrics
from .simdata import SimConfig, generate_dataset
from .training import TRAIN_HOURS, HyperGrid, grid_search

logger = logging.getLogger("compositetrc")

MODEL_CHOICES = tuple(ESTIMATORS)


@dataclass
class RunConfig:
    """Resolved options of one invocation."""

    command: str
    model: str = "gp-conv"
    glucose: Path = None
    meals: Path = None
    out: Path = Path(".")
    seed: int = 0
    folds: int = 4
    grid: Path = None
    center: str = "mean"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_CHOICES:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODEL_CHOICES}")
        if self.center not in ("mean", "zscore"):
            raise ConfigError(f"center must be mean or zscore, got {self.center!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.folds < 2:
            raise ConfigError("--folds must be at least 2")
        for name in ("glucose", "meals", "grid"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"--{name} {p}: file not found")

    @property
    def random_state(self):
        """32-bit seed for numpy's legacy generator derived from the 64-bit seed."""
        return int(np.random.SeedSequence(self.seed).generate_state(1)[0])


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="gp-conv", choices=MODEL_CHOICES)
    common.add_argument("--glucose", type=Path)
    common.add_argument("--meals", type=Path)
    common.add_argument("--out", type=Path, default=Path("."))
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--folds", type=int, default=4)
    common.add_argument("--grid", type=Path, help="JSON file overriding grid axes")
    common.add_argument("--center", default="mean", choices=("mean", "zscore"))
    common.add_argument("--train-hours", type=float, default=TRAIN_HOURS,
                        help="observations before this time are training data")
    common.add_argument("--restarts", type=int, default=3)
    common.add_argument("--max-evals", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="compositetrc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="write a synthetic cohort with ground truth")
    s.add_argument("--patients", type=int, default=12)
    s.add_argument("--days", type=int, default=3)
    s.add_argument("--noise-variance", type=float, default=0.05)
    c = sub.add_parser("cv", parents=[common], help="forward-chaining grid search on the training days")
    c.add_argument("--jobs", type=int, default=1)
    f = sub.add_parser("fit", parents=[common], help="fit a model on the training days")
    f.add_argument("--point", type=Path, help="grid point JSON (e.g. best_point.json from cv)")
    for name in ("predict", "evaluate"):
        q = sub.add_parser(name, parents=[common])
        q.add_argument("--params", type=Path, required=True, help="params.json written by fit")
        if name == "predict":
            q.add_argument("--step", type=float, default=0.25, help="query grid step in hours")
    return p


def _require_data(cfg):
    if cfg.glucose is None or cfg.meals is None:
        raise ConfigError(f"{cfg.command} needs --glucose and --meals")
    return io.ingest(cfg.glucose, cfg.meals)


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _training_data(data: Dataset, train_hours):
    train = data.select_time(-np.inf, train_hours)
    if train.n_obs == 0:
        raise DataValidationError(f"no observations before {train_hours} h")
    return train


def _audit(path, rows, train_hours, command):
    """Record every observation row read while fitting; refuses rows at or after ``train_hours``."""
    late = [r for r in rows if r[2] >= train_hours]
    if late:
        raise DataValidationError(f"{command} read {len(late)} rows at or after {train_hours} h")
    return _write_json(path, {"command": command, "train_hours": train_hours, "n_rows": len(rows),
                              "max_time": max((r[2] for r in rows), default=None),
                              "rows": [list(r) for r in rows]})


def cmd_simulate(cfg: RunConfig):
    sim = SimConfig(n_patients=cfg.extra["patients"], days=cfg.extra["days"], kind=cfg.model,
                    noise_variance=cfg.extra["noise_variance"], seed=cfg.random_state)
    data, truth = generate_dataset(sim)
    io.write_glucose(data, cfg.out / "glucose.csv")
    io.write_meals(data, cfg.out / "meals.csv")
    io.write_truth(truth, cfg.out / "truth.csv")
    _write_json(cfg.out / "generating_params.json", truth.params.to_dict())
    return {"patients": len(data), "observations": data.n_obs, "meals": data.n_meals}


def _estimator_kwargs(cfg):
    kw = {"center": cfg.center, "n_restarts": cfg.extra["restarts"], "random_state": cfg.random_state}
    if cfg.extra.get("max_evals") is not None:
        kw["max_evals"] = cfg.extra["max_evals"]
    return kw


def cmd_cv(cfg: RunConfig):
    data = _require_data(cfg)
    grid = HyperGrid.from_dict(json.loads(cfg.grid.read_text())) if cfg.grid else HyperGrid()
    th = cfg.extra["train_hours"]
    res = grid_search(data, grid, cfg.model, n_folds=cfg.folds, train_stop=th,
                      estimator_kwargs=_estimator_kwargs(cfg), n_jobs=cfg.extra.get("jobs", 1))
    n_splits = cfg.folds - 1
    header = ["window", "lengthscales", "baseline_lengthscale"] + [f"split_{k + 1}_rmse" for k in range(n_splits)] + [
        "mean_rmse", "status"]
    rows = []
    for s in res.scores:
        pt = s["point"]
        rows.append([pt.get("window", ""), " ".join(map(repr, pt.get("lengthscales", ()))),
                     pt.get("baseline_lengthscale", ""), *map(repr, s["split_rmse"]), repr(s["mean_rmse"]),
                     s["status"]])
    io._write(cfg.out / "cv_scores.csv", header, rows)
    _write_json(cfg.out / "best_point.json", {"model": cfg.model, "point": res.best, "mean_rmse": res.best_score})
    train = data.select_time(-np.inf, th)
    _audit(cfg.out / "audit_cv.json", [(str(p), int(r), float(t)) for p, r, t in
                                       zip(train.obs_patient, train.row_ids, train.times)], th, "cv")
    return {"grid_points": len(res.scores), "best": res.best, "mean_rmse": res.best_score}


def cmd_fit(cfg: RunConfig):
    data = _require_data(cfg)
    th = cfg.extra["train_hours"]
    train = _training_data(data, th)
    point = {}
    if cfg.extra.get("point"):
        d = json.loads(Path(cfg.extra["point"]).read_text())
        point = d.get("point", d)
    est = make_estimator(cfg.model, **point, **_estimator_kwargs(cfg)).fit(train)
    out = est.to_dict()
    out["train_hours"] = th
    diag = est.diagnostics_
    if hasattr(diag, "log_marginal_likelihood"):
        out["diagnostics"] = {"log_marginal_likelihood": diag.log_marginal_likelihood,
                              "initial_log_marginal_likelihood": diag.initial_log_marginal_likelihood,
                              "jitter": diag.jitter, "evaluations": diag.n_evaluations}
    elif isinstance(diag, dict):
        out["diagnostics"] = {"objective": diag["objective"], "initial_objective": diag["initial_objective"]}
    _write_json(cfg.out / "params.json", out)
    _audit(cfg.out / "audit_fit.json", est.training_rows_, th, "fit")
    return {"model": cfg.model, **out.get("diagnostics", {})}


def _load_fitted(cfg, data):
    d = json.loads(cfg.extra["params"].read_text())
    if d.get("kind") != cfg.model:
        logger.info("using model kind %s from %s", d.get("kind"), cfg.extra["params"])
    th = d.get("train_hours", TRAIN_HOURS)
    est = ESTIMATORS[d["kind"]].restore(d, _training_data(data, th))
    return est, th


def cmd_predict(cfg: RunConfig):
    from .plotting import plot_patient

    data = _require_data(cfg)
    est, _ = _load_fitted(cfg, data)
    step = cfg.extra["step"]
    lo, hi = data.span
    times = np.arange(np.floor(lo / step) * step, hi + 0.5 * step, step)
    queries = make_queries(data, times)
    dec = est.predict_decomposition(queries)
    io.write_predictions(dec, cfg.out / "predictions.csv")
    for pid in data.patient_ids:
        plot_patient(dec, data, pid, cfg.out / "plots" / f"{pid}.svg")
    return {"rows": len(dec), "max_additivity_error": dec.additivity_error()}


def cmd_evaluate(cfg: RunConfig):
    data = _require_data(cfg)
    est, th = _load_fitted(cfg, data)
    test = data.select_time(th, np.inf)
    if test.n_obs == 0:
        raise DataValidationError(f"no test observations at or after {th} h")
    mean, sd = est.predict(test, return_std=True)
    # metrics live on the fitting scale (per-patient centered or z-scored glucose)
    off, sc = est.centerer_.row_offsets(test)
    report = compute_metrics((test.values - off) / sc, (mean - off) / sc, (sd / sc) ** 2, test.obs_patient)
    path = cfg.out / "metrics.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_text())
    return {"rmse": report.rmse, "mae": report.mae, "mnll": report.mnll, "n": report.n}


COMMANDS = {"simulate": cmd_simulate, "cv": cmd_cv, "fit": cmd_fit, "predict": cmd_predict, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    base = {"command", "model", "glucose", "meals", "out", "seed", "folds", "grid", "center", "verbose"}
    try:
        cfg = RunConfig(args.command, args.model, args.glucose, args.meals, args.out, args.seed, args.folds,
                        args.grid, args.center, {k: v for k, v in vars(args).items() if k not in base})
        summary = COMMANDS[args.command](cfg)
    except TRCError as e:
        print(json.dumps({"error": e.category, "type": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return e.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as e:
        # unreadable or malformed inputs count as data errors
        print(json.dumps({"error": "data", "type": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 3
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
