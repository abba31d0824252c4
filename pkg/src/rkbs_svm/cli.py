"""Command-line interface: ``train``, ``predict``, ``verify`` and ``bench``.

Exit codes: 0 success, 1 a verification check failed, 2 input error,
3 the solver did not converge (a model or report is still written).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rkbs_svm.function_space import DataError, GramCapacityError, RkbsModel, TrainingSet
from rkbs_svm.kernels import SpectralKernel, canonical_pair_check, check_integrability
from rkbs_svm.oracle import (
    QuadratureGrid,
    finite_difference_gradient,
    quad_evaluate,
    quad_reproduction,
)
from rkbs_svm.solver import (
    LossSpec,
    NonConvergenceError,
    Problem,
    RegularizerSpec,
    SolverConfig,
    classify,
    gradient,
    objective,
    predict,
    train,
)

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2, 3
THREADS_ENV = "RKBS_SVM_THREADS"


class ConfigError(ValueError):
    """Malformed run configuration."""


def _require_keys(doc: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}")
    missing = sorted(required - set(doc))
    if missing:
        raise ConfigError(f"missing field(s) in {where}: {', '.join(missing)}")


@dataclass(frozen=True)
class VerifyOptions:
    grid_nodes: int = 2**14
    grid_scale: float = 40.0
    points: int = 20
    tol_quadrature: float = 1e-4
    tol_gradient: float = 1e-5
    tol_representer: float = 1e-6


@dataclass(frozen=True)
class BenchOptions:
    n_train: int = 20
    n_test: int = 200
    separation: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    Required: ``p``, ``theta``, ``n``, ``loss``, ``lambda``, ``seed`` and
    ``real_mode``. Optional: ``solver`` (tolerances, documented defaults),
    ``regularizer`` (defaults to ``lambda_t_squared``), ``verify`` and
    ``bench``.
    """

    p: int
    theta: float
    n: float
    loss: LossSpec
    reg: RegularizerSpec
    solver: SolverConfig
    seed: int
    real_mode: bool
    verify: VerifyOptions = field(default_factory=VerifyOptions)
    bench: BenchOptions = field(default_factory=BenchOptions)

    REQUIRED = {"p", "theta", "n", "loss", "lambda", "seed", "real_mode"}
    OPTIONAL = {"solver", "regularizer", "verify", "bench"}

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        _require_keys(doc, cls.REQUIRED | cls.OPTIONAL, cls.REQUIRED, "config")
        try:
            p = doc["p"]
            if isinstance(p, bool) or not isinstance(p, (int, float)) or int(p) != p or p < 2 or int(p) % 2:
                raise ConfigError(f"p must be an even integer >= 2, got {p!r}")
            if not isinstance(doc["real_mode"], bool):
                raise ConfigError("real_mode must be true or false")
            if isinstance(doc["seed"], bool) or not isinstance(doc["seed"], int):
                raise ConfigError("seed must be an integer")
            theta, n, lam = (_number(doc, key) for key in ("theta", "n", "lambda"))
            loss = LossSpec(doc["loss"]) if isinstance(doc["loss"], str) else _section(LossSpec, doc["loss"], "loss")
            reg_doc = doc.get("regularizer", {})
            _require_keys(reg_doc, {"kind", "power"}, set(), "regularizer")
            reg = RegularizerSpec(lam=lam, **reg_doc)
            solver = _section(SolverConfig, doc.get("solver", {}), "solver")
            verify = _section(VerifyOptions, doc.get("verify", {}), "verify")
            bench = _section(BenchOptions, doc.get("bench", {}), "bench")
            SpectralKernel(theta, n)
        except (TypeError, ValueError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(str(err)) from err
        return cls(int(p), theta, n, loss, reg, solver, doc["seed"], doc["real_mode"], verify, bench)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        return cls.from_dict(doc)

    def kernel(self, dim: int) -> SpectralKernel:
        return SpectralKernel(self.theta, self.n, dim)

    def with_seed(self, seed: int | None) -> RunConfig:
        if seed is None:
            return self
        return dataclasses.replace(self, seed=seed, solver=dataclasses.replace(self.solver, seed=seed))


def _number(doc: dict, key: str) -> float:
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{key} must be a finite number, got {val!r}")
    return float(val)


def _section(cls, doc, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    _require_keys(doc, names, set(), where)
    return cls(**doc)


def read_csv(path, dim: int | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Read ``d`` feature columns followed by one label column (header optional).

    With ``dim`` given, a file of exactly ``dim`` columns is read as features
    without labels.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    except FileNotFoundError as err:
        raise DataError(f"data file not found: {path}") from err
    if rows:
        try:
            [float(cell) for cell in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise DataError(f"{path} contains no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataError(f"{path} has rows of unequal length")
    try:
        table = np.array([[float(cell) for cell in r] for r in rows])
    except ValueError as err:
        raise DataError(f"{path}: {err}") from err
    if dim is not None and width == dim:
        return table, None
    if width < 2:
        raise DataError(f"{path} needs at least one feature column and one label column")
    if dim is not None and width != dim + 1:
        raise DataError(f"{path} has {width} columns; expected {dim} features (plus an optional label)")
    return table[:, :-1], table[:, -1]


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _say(msg: str) -> None:
    print(msg, flush=True)


def _build_problem(cfg: RunConfig, points: np.ndarray, labels: np.ndarray) -> Problem:
    data = TrainingSet(points, labels)
    kernel = cfg.kernel(data.dim)
    check_integrability(kernel, cfg.p)
    return Problem(data, kernel, cfg.p, cfg.loss, cfg.reg, real_mode=cfg.real_mode, workers=_workers())


def _fit(cfg: RunConfig, problem: Problem) -> tuple[RkbsModel, dict, bool]:
    try:
        model, diag = train(problem, cfg.solver)
        info = diag.as_dict()
        return model, info, True
    except NonConvergenceError as err:
        diag = err.diagnostics
        meta = {"converged": False, "loss": cfg.loss.kind, "objective": diag.objective}
        model = problem.model(err.best, meta, real_mode=diag.mode == "real")
        info = diag.as_dict() | {"message": str(err)}
        return model, info, False


def cmd_train(config_path, data_csv, model_out, seed_override=None) -> int:
    cfg = RunConfig.load(config_path).with_seed(seed_override)
    points, labels = read_csv(data_csv)
    problem = _build_problem(cfg, points, labels)
    model, info, ok = _fit(cfg, problem)
    model.save(model_out)
    _say(f"objective      {info['objective']:.12g}")
    _say(f"gradient norm  {info['grad_norm']:.3e}")
    _say(f"iterations     {info['iterations']}")
    _say(f"mode           {info['mode']}")
    _say(f"rkbs norm      {model.norm():.12g}")
    if not ok:
        _say(f"warning: {info['message']}")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_predict(model_path, data_csv, out_csv) -> int:
    try:
        model = RkbsModel.load(model_path)
    except FileNotFoundError as err:
        raise DataError(f"model file not found: {model_path}") from err
    except (KeyError, ValueError, TypeError) as err:
        raise DataError(f"cannot read model {model_path}: {err}") from err
    points, _ = read_csv(data_csv, dim=model.kernel.dim)
    values = predict(model, points)
    labelled = model.metadata.get("loss") in ("logistic", "squared_hinge")
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im"] + (["label"] if labelled else []))
        labels = classify(model, points) if labelled else None
        for i, v in enumerate(values):
            writer.writerow([repr(float(v.real)), repr(float(v.imag))] + ([int(labels[i])] if labelled else []))
    _say(f"wrote {len(values)} predictions to {out_csv}")
    return EXIT_OK


def _status(value: float, tol: float, delta: float = 0.0) -> str:
    if delta > tol / 2:
        return "inconclusive"
    return "pass" if value <= tol else "fail"


def run_verification(cfg: RunConfig) -> dict:
    """Oracle suite on seeded one-dimensional instances built from ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    opts = cfg.verify
    kernel = cfg.kernel(1)
    check_integrability(kernel, cfg.p)
    grid = QuadratureGrid(opts.grid_scale * kernel.theta, opts.grid_nodes)
    sections = {}

    pair = canonical_pair_check(kernel, grid) if grid.is_admissible else None
    sections["kernel_normalization"] = (
        {"status": pair.status, "discrepancy": pair.discrepancy, "delta": pair.refinement_delta}
        if pair else {"status": "inconclusive", "reason": f"grid of {grid.nodes_count} nodes is too coarse"}
    )

    centers = np.sort(rng.uniform(-2, 2, 3))
    coef = rng.standard_normal(3) + (0 if cfg.real_mode else 1j * rng.standard_normal(3))
    model = RkbsModel(cfg.p, kernel, centers, coef)
    xs = rng.uniform(-3, 3, opts.points)
    if grid.is_admissible:
        est = quad_evaluate(grid, kernel, cfg.p, centers, coef, xs)
        err = float(np.max(np.abs(model.evaluate(xs) - est.value)))
        sections["quadrature_agreement"] = {
            "status": _status(err, opts.tol_quadrature, est.delta), "max_error": err, "delta": est.delta,
        }
        rep = quad_reproduction(grid, kernel, cfg.p, model, xs)
        worst = float(np.max(rep.value))
        sections["reproduction"] = {
            "status": _status(worst, opts.tol_quadrature, rep.delta), "max_residual": worst, "delta": rep.delta,
        }
    else:
        reason = f"grid of {grid.nodes_count} nodes is too coarse"
        sections["quadrature_agreement"] = {"status": "inconclusive", "reason": reason}
        sections["reproduction"] = {"status": "inconclusive", "reason": reason}

    labels = np.where(rng.standard_normal(3) >= 0, 1.0, -1.0) if cfg.loss.is_classification else rng.standard_normal(3)
    problem = Problem(TrainingSet(centers, labels), kernel, cfg.p, cfg.loss, cfg.reg, real_mode=cfg.real_mode)
    worst = 0.0
    for _ in range(5):
        c = rng.standard_normal(3) + (0 if cfg.real_mode else 1j * rng.standard_normal(3))
        g = gradient(problem, c)
        fd = finite_difference_gradient(lambda z: objective(problem, z), c, 1e-6, cfg.real_mode)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-300)))
    sections["gradient"] = {"status": _status(worst, opts.tol_gradient), "max_relative_error": worst}

    pts = np.sort(rng.uniform(-2, 2, 2))
    ys = np.where(rng.standard_normal(2) >= 0, 1.0, -1.0) if cfg.loss.is_classification else rng.standard_normal(2)
    data = TrainingSet(pts, ys)
    extra = float(rng.uniform(-3, 3))
    try:
        base = train(Problem(data, kernel, cfg.p, cfg.loss, cfg.reg, real_mode=cfg.real_mode), cfg.solver)[1]
        wide = Problem(data, kernel, cfg.p, cfg.loss, cfg.reg, centers=np.append(pts, extra), real_mode=cfg.real_mode)
        more = train(wide, cfg.solver)[1]
        gain = base.objective - more.objective
        sections["representer"] = {"status": _status(gain, opts.tol_representer), "improvement": gain}
    except NonConvergenceError as err:
        sections["representer"] = {"status": "inconclusive", "reason": str(err)}
    return sections


def cmd_verify(config_path, out_report=None, seed_override=None) -> int:
    cfg = RunConfig.load(config_path).with_seed(seed_override)
    sections = run_verification(cfg)
    for name, sec in sections.items():
        _say(f"{name:22s} {sec['status']}")
    statuses = [sec["status"] for sec in sections.values()]
    if "inconclusive" in statuses:
        _say("warning: some checks were inconclusive (see report)")
    if out_report:
        Path(out_report).write_text(json.dumps(sections, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_VERIFY_FAILED if "fail" in statuses else EXIT_OK


def two_class_data(n: int, separation: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian clouds in the plane centred at ``±separation (1, 1) / √2``."""
    labels = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    rng.shuffle(labels)
    centre = separation / math.sqrt(2) * np.ones(2)
    points = rng.standard_normal((n, 2)) + labels[:, None] * centre
    return points, labels


def cmd_bench(config_path, out_report, seed_override=None) -> int:
    cfg = RunConfig.load(config_path).with_seed(seed_override)
    opts = cfg.bench
    if opts.n_train < 1:
        raise DataError("bench needs n_train >= 1 training points")
    dim = 2
    kernel = cfg.kernel(dim)
    for p in (2, 4):
        check_integrability(kernel, p)
    rng = np.random.default_rng(cfg.seed)
    x_train, y_train = two_class_data(opts.n_train, opts.separation, rng)
    x_test, y_test = two_class_data(opts.n_test, opts.separation, rng)
    report = {
        "seed": cfg.seed, "n_train": opts.n_train, "n_test": opts.n_test, "theta": cfg.theta, "n": cfg.n,
        "loss": cfg.loss.kind, "lambda": cfg.reg.lam, "results": {},
        "note": "accuracies are reported as observed; no ordering between p=2 and p=4 is asserted",
    }
    all_ok = True
    for p in (2, 4):
        run = dataclasses.replace(cfg, p=p)
        start = time.perf_counter()
        model, info, ok = _fit(run, _build_problem(run, x_train, y_train))
        elapsed = time.perf_counter() - start
        all_ok &= ok
        report["results"][f"p={p}"] = {
            "train_accuracy": float(np.mean(classify(model, x_train) == y_train)),
            "test_accuracy": float(np.mean(classify(model, x_test) == y_test)) if opts.n_test else None,
            "objective": info["objective"],
            "gradient_norm": info["grad_norm"],
            "iterations": info["iterations"],
            "converged": ok,
            "mode": info["mode"],
            "runtime_seconds": elapsed,
        }
        res = report["results"][f"p={p}"]
        _say(f"p={p}: train accuracy {res['train_accuracy']:.3f}, test accuracy {res['test_accuracy']}, "
             f"objective {res['objective']:.6g}, {elapsed:.2f}s")
    Path(out_report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK if all_ok else EXIT_NONCONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rkbs-svm", description="SVM training in p-norm reproducing kernel Banach spaces")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model to a CSV data set")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--model", required=True, help="output model document (JSON)")
    p_train.add_argument("--seed-override", type=int)

    p_pred = sub.add_parser("predict", help="evaluate a saved model at CSV points")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)

    p_ver = sub.add_parser("verify", help="run the oracle checks")
    p_ver.add_argument("--config", required=True)
    p_ver.add_argument("--out", help="optional JSON report")
    p_ver.add_argument("--seed-override", type=int)

    p_bench = sub.add_parser("bench", help="compare p=2 and p=4 classifiers on synthetic data")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--seed-override", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.data, args.model, args.seed_override)
        if args.command == "predict":
            return cmd_predict(args.model, args.data, args.out)
        if args.command == "verify":
            return cmd_verify(args.config, args.out, args.seed_override)
        return cmd_bench(args.config, args.out, args.seed_override)
    except (ConfigError, DataError, GramCapacityError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
