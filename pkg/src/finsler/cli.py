"""Batch experiment runner.

    finsler verify|dim-growth|transport|independence [--config path]
            [--metric id] [--point x1,x2] [--seed k] [--out dir]

Each command writes ``<out>/report.json`` (full diagnostics, ``schema: 1``)
and ``<out>/table.csv``.  Exit codes: 0 when every check passes, 1 when a
check fails, 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FinslerError, NotConstantCurvature
from .holonomy import (affine_factor_test, function_independence_rank, generate_algebra,
                       surface_identity_check)
from .metrics import HOMOGENEITY_FACTORS, catalog_ids, get_metric, homogeneity_residual, sample_tangents
from .spray import (DEFAULT_SEED, flag_curvature_fit, fundamental_tensor, homogeneity_ladder,
                    projective_flatness_residual, projective_identity_residuals, rapcsak_residual)
from .transport import ChartCurve, loop_holonomy

SCHEMA = 1
COMMANDS = ("verify", "dim-growth", "transport", "independence")

DEFAULT_POINTS = (
    (0.3, 0.1),
    (-0.2, 0.4),
    (0.1, -0.5),
    (-0.45, -0.15),
    (0.5, 0.3),
)
DEFAULT_METRICS = ("euclidean", "klein", "funk", "berwald_flat")

TOL = {
    "positivity": 0.0,
    "homogeneity": 1e-12,
    "ladder": 1e-10,
    "projective_flatness": 1e-8,
    "spray": 1e-8,
    "connection": 1e-9,
    "berwald": 1e-8,
    "curvature": 1e-8,
    "trace": 1e-9,
    "rapcsak": 1e-7,
    "lambda": 1e-6,
    "surface": 1e-6,
    "drift_per_length": 1e-8,
}

CONFIG_KEYS = {
    "metrics", "metric", "params", "points", "seed", "out", "N", "depth_cap", "field_cap",
    "step", "epsilons", "sample_count", "curve", "loop_side", "indicatrix_samples",
}


@dataclass
class ExperimentConfig:
    metrics: list[str] = field(default_factory=lambda: list(DEFAULT_METRICS))
    params: dict = field(default_factory=dict)
    points: list[tuple[float, ...]] = field(default_factory=lambda: [tuple(p) for p in DEFAULT_POINTS])
    seed: int = DEFAULT_SEED
    out: str = "finsler-out"
    N: int = 64
    depth_cap: int = 3
    field_cap: int = 64
    step: float = 1e-3
    epsilons: list[float] = field(default_factory=lambda: [0.04, 0.02, 0.01])
    sample_count: int = 100
    curve: dict | None = None
    loop_side: float = 0.2
    indicatrix_samples: int = 64

    def validate(self) -> None:
        if not self.metrics:
            raise ConfigError("no metrics selected")
        known = catalog_ids()
        for m in self.metrics:
            if m not in known:
                raise ConfigError(f"unknown metric {m!r}; known: {known}")
        for p in self.points:
            if len(p) != 2 or not all(math.isfinite(c) for c in p):
                raise ConfigError(f"base point {p!r} must be two finite coordinates")
        for name in ("N", "depth_cap", "field_cap", "sample_count", "indicatrix_samples"):
            if getattr(self, name) < 0 or int(getattr(self, name)) != getattr(self, name):
                raise ConfigError(f"{name} must be a non-negative integer")
        if self.N < 4 or self.N % 2:
            raise ConfigError("N must be an even integer >= 4")
        if not 0 < self.step < 1:
            raise ConfigError("step must lie in (0, 1)")
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise ConfigError("epsilons must be positive")
        if self.sample_count < 1:
            raise ConfigError("sample_count must be positive")

    def spec(self, metric: str):
        params = self.params.get(metric, {})
        try:
            return get_metric(metric, **params)
        except (TypeError, KeyError, FinslerError) as exc:
            raise ConfigError(f"cannot build metric {metric!r} with {params}: {exc}") from exc


def parse_point(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad point {text!r}; expected x1,x2") from exc


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "metric" in raw:
        raw["metrics"] = [raw.pop("metric")]
    if args.metric:
        raw["metrics"] = list(args.metric)
    if args.point:
        raw["points"] = [parse_point(p) for p in args.point]
    for name in ("seed", "out", "N", "depth_cap", "step", "sample_count"):
        value = getattr(args, name)
        if value is not None:
            raw[name] = value
    if "points" in raw:
        try:
            raw["points"] = [tuple(float(c) for c in p) for p in raw["points"]]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad points: {exc}") from exc
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def worker_count() -> int | None:
    raw = os.environ.get("FINSLER_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"FINSLER_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"FINSLER_THREADS must be a positive integer, got {raw!r}")
    return n


def run_cells(fn, cells: list[tuple]) -> list:
    """Evaluate ``fn(*cell)`` concurrently; results come back in ``cells`` order."""
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda c: fn(*c), cells))


def _check(name: str, value, threshold: float, passed: bool | None = None, **extra) -> dict:
    value = float(value)
    if passed is None:
        passed = bool(value < threshold) if threshold > 0 else bool(value > threshold)
    return {"check": name, "value": value, "threshold": threshold, "passed": bool(passed), **extra}


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def verify_metric(cfg: ExperimentConfig, metric: str) -> dict:
    spec = cfg.spec(metric)
    seed = cfg.seed
    checks = []
    x, y = sample_tangents(spec, cfg.sample_count, np.random.default_rng(seed))

    try:
        g = fundamental_tensor(spec, x, y)
        min_eig = float(np.min(np.linalg.eigvalsh(g)))
    except FinslerError:
        min_eig = float("nan")
    checks.append(_check("positivity", min_eig, TOL["positivity"],
                         passed=bool(min_eig > 0), description="smallest eigenvalue of g"))
    checks.append(_check("homogeneity", homogeneity_residual(spec, x, y), TOL["homogeneity"],
                         factors=list(HOMOGENEITY_FACTORS)))
    ladder = homogeneity_ladder(spec, cfg.sample_count, seed=seed)
    checks.append(_check("homogeneity_ladder", max(ladder.values()), TOL["ladder"], parts=ladder))

    try:
        lam, fit_residual = flag_curvature_fit(spec, seed=seed)
        fit_ok = True
    except NotConstantCurvature as exc:
        lam, fit_residual, fit_ok = float("nan"), float("inf"), False
        checks.append(_check("flag_curvature", float("inf"), TOL["lambda"], passed=False,
                             error=str(exc)))
    if fit_ok:
        nominal = spec.nominal_lambda
        gap = abs(lam - nominal) if nominal is not None else 0.0
        checks.append(_check("flag_curvature", fit_residual, TOL["lambda"],
                             passed=fit_residual < TOL["lambda"] and gap <= TOL["lambda"],
                             lambda_fit=lam, nominal_lambda=nominal))

    if spec.projectively_flat:
        checks.append(_check("projective_flatness",
                             projective_flatness_residual(spec, cfg.sample_count, seed),
                             TOL["projective_flatness"]))
        if fit_ok:
            ident = projective_identity_residuals(spec, cfg.sample_count, seed, lam=lam)
            for key in ("spray", "connection", "berwald", "curvature", "trace"):
                checks.append(_check(f"projective_{key}", ident[key], TOL[key]))
            printed, corrected = rapcsak_residual(spec, x, y, lam=lam)
            p_ok = bool(np.max(printed) < TOL["rapcsak"])
            c_ok = bool(np.max(corrected) < TOL["rapcsak"])
            winner = {(True, True): "both", (True, False): "printed",
                      (False, True): "corrected", (False, False): "neither"}[(p_ok, c_ok)]
            checks.append(_check("rapcsak", min(np.max(printed), np.max(corrected)), TOL["rapcsak"],
                                 passed=p_ok or c_ok, winner=winner,
                                 printed_max=float(np.max(printed)),
                                 corrected_max=float(np.max(corrected))))

    if spec.dimension == 2 and fit_ok:
        first, second = surface_identity_check(spec, sample_count=min(cfg.sample_count, 50),
                                               seed=seed, lam=lam)
        checks.append(_check("surface_identity_first", first, TOL["surface"]))
        checks.append(_check("surface_identity_second", second, TOL["surface"]))

    return {"metric": metric, "lambda_fit": lam, "checks": checks,
            "passed": all(c["passed"] for c in checks)}


def cmd_verify(cfg: ExperimentConfig) -> tuple[dict, list[dict], bool]:
    results = run_cells(lambda m: verify_metric(cfg, m), [(m,) for m in sorted(cfg.metrics)])
    rows = [{"metric": r["metric"], "check": c["check"], "value": c["value"],
             "threshold": c["threshold"], "passed": c["passed"]}
            for r in results for c in r["checks"]]
    return {"metrics": results}, rows, all(r["passed"] for r in results)


def _cells(cfg: ExperimentConfig) -> list[tuple[str, tuple]]:
    return sorted((m, tuple(p)) for m in cfg.metrics for p in cfg.points)


def _surface(cfg: ExperimentConfig, metric: str):
    spec = cfg.spec(metric)
    if spec.dimension != 2:
        raise ConfigError(f"{metric}: this command needs a surface metric (dimension 2)")
    return spec


def _inside(spec, point) -> None:
    if not spec.domain(np.asarray(point, dtype=float))[0]:
        raise ConfigError(f"{spec.id}: base point {point} outside the chart domain")


def cmd_dim_growth(cfg: ExperimentConfig) -> tuple[dict, list[dict], bool]:
    def one(metric, point):
        spec = _surface(cfg, metric)
        _inside(spec, point)
        return generate_algebra(spec, point, cfg.depth_cap, cfg.field_cap, cfg.N)

    cells = _cells(cfg)
    reports = run_cells(one, cells)
    rows = [row for rep in reports for row in rep.csv_rows()]
    return {"N": cfg.N, "depth_cap": cfg.depth_cap,
            "cells": [rep.to_dict() for rep in reports]}, rows, True


def _loop_for(cfg: ExperimentConfig, point) -> ChartCurve:
    if cfg.curve is not None:
        desc = dict(cfg.curve)
        desc.setdefault("corner", list(point))
        try:
            curve = ChartCurve.from_config(desc)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad curve description: {exc}") from exc
    else:
        curve = ChartCurve.square(np.asarray(point, dtype=float), cfg.loop_side)
    if not curve.closed:
        raise ConfigError("transport needs a closed loop")
    return curve


def cmd_transport(cfg: ExperimentConfig) -> tuple[dict, list[dict], bool]:
    def one(metric, point):
        spec = _surface(cfg, metric)
        _inside(spec, point)
        loop = _loop_for(cfg, point)
        table = loop_holonomy(spec, loop, cfg.indicatrix_samples, cfg.step)
        per_length = table.f_drift / loop.length
        checks = [
            _check("drift_per_length", per_length, TOL["drift_per_length"]),
            _check("monotone", float(table.is_monotone()), 0.0, passed=table.is_monotone()),
        ]
        summary = {
            "metric": metric, "x": list(point), "curve": loop.description,
            "length": loop.length, "step": cfg.step, "f_drift": table.f_drift,
            "f_drift_per_length": per_length, "indicatrix_error": table.indicatrix_error,
            "max_displacement": table.max_displacement(),
            "max_angle_shift": float(np.max(np.abs(table.displacement()))),
            "nonlinearity": table.nonlinearity(), "monotone": table.is_monotone(),
            "checks": checks, "passed": all(c["passed"] for c in checks),
        }
        rows = [{"metric": metric, "x1": point[0], "x2": point[1], "theta_in": float(a),
                 "theta_out": float(b)} for a, b in zip(table.theta_in, table.theta_out)]
        return summary, rows

    out = run_cells(one, _cells(cfg))
    summaries = [s for s, _ in out]
    rows = [r for _, rs in out for r in rs]
    return {"cells": summaries}, rows, all(s["passed"] for s in summaries)


def cmd_independence(cfg: ExperimentConfig) -> tuple[dict, list[dict], bool]:
    def one(metric, point):
        spec = _surface(cfg, metric)
        _inside(spec, point)
        dep = function_independence_rank(spec, point, cfg.N)
        affine = affine_factor_test(spec, point)
        return {**dep.to_dict(), "affine": affine.to_dict()}, dep

    out = run_cells(one, _cells(cfg))
    rows = []
    for cell, dep in out:
        rows.append({"metric": dep.metric, "x1": float(dep.x[0]), "x2": float(dep.x[1]),
                     "family": "1,P1,P2", "form": "", "rank": dep.base_rank,
                     "a": "", "b": "", "c": "", "residual": "",
                     "affine": cell["affine"]["classification"]})
        for fam in dep.families:
            a, b, c = fam.coefficients
            rows.append({"metric": dep.metric, "x1": float(dep.x[0]), "x2": float(dep.x[1]),
                         "family": f"1,P1,P2,h{fam.pair[0] + 1}{fam.pair[1] + 1}",
                         "form": fam.form, "rank": fam.rank, "a": a, "b": b, "c": c,
                         "residual": fam.residual, "affine": cell["affine"]["classification"]})
    return {"N": cfg.N, "cells": [cell for cell, _ in out]}, rows, True


HANDLERS = {
    "verify": cmd_verify,
    "dim-growth": cmd_dim_growth,
    "transport": cmd_transport,
    "independence": cmd_independence,
}


def write_outputs(out_dir: Path, command: str, cfg: ExperimentConfig, body: dict,
                  rows: list[dict], passed: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "schema": SCHEMA,
        "command": command,
        "seed": cfg.seed,
        "config": {k: v for k, v in vars(cfg).items() if k != "out"},
        "passed": passed,
        **body,
    }
    (out_dir / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    with open(out_dir / "table.csv", "w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finsler", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file; flags below override its fields")
    parser.add_argument("--metric", action="append", help="catalog id (repeatable)")
    parser.add_argument("--point", action="append", help="base point x1,x2 (repeatable)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--N", type=int, help="indicatrix samples")
    parser.add_argument("--depth-cap", dest="depth_cap", type=int)
    parser.add_argument("--step", type=float, help="transport step as a fraction of curve length")
    parser.add_argument("--sample-count", dest="sample_count", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args)
        body, rows, passed = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FinslerError as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    write_outputs(Path(cfg.out), args.command, cfg, body, rows, passed)
    status = "all checks passed" if passed else "check failures"
    print(f"{args.command}: {status}; wrote {cfg.out}/report.json and {cfg.out}/table.csv")
    if not passed:
        for name, detail in _failures(body):
            print(f"  FAIL {name}: {detail}", file=sys.stderr)
    return 0 if passed else 1


def _failures(body: dict):
    for group in body.get("metrics", []) + body.get("cells", []):
        for c in group.get("checks", []):
            if not c["passed"]:
                yield f"{group.get('metric')}/{c['check']}", f"value {c['value']!r} vs {c['threshold']!r}"


if __name__ == "__main__":
    sys.exit(main())
