"""Config-driven runs: validate, approximate, recover, sweep, report.

Every run writes ``report.json`` into the output directory, even when it
aborts; the exit code is 0 only if no error occurred and every check that
the run performed passed.  Apart from the ``timestamp`` key, the report is
a pure function of the config.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .config import ExperimentConfig
from .degeneracy import (
    check_disjoint,
    choose_centers,
    degenerate_approximation,
    error_spectra,
    find_delta,
    halving_deltas,
    refine_for_delta,
    sweep_delta,
    verify_degeneracy,
)
from .errors import BranchlineError, ConfigError, InvalidInput, PlanInvalid
from .files import atomic_write, csv_text, write_signal_csv, write_spectrum_csv
from .fixtures import build_process
from .model import BranchingProcess, Grid, audit_coincidences, validate_structure_set, verify_coincidence
from .recovery import extrapolate_from_segment, sample_reconstruct
from .spectral import forward_transform
from .topology import components, is_connected

STAGES = ("validate", "approximate", "recover", "sweep", "report")
PLOT_HEADER = ["experiment", "branch", "metric", "value"]
SWEEP_HEADER = ["delta", "branch", "l2_error", "sup_error", "predicted_l2", "min_bins"]
ERROR_IDENTITY_RTOL = 1e-9
BAND_TOL = 1e-12
DEFAULT_ERROR_TOL = 1e-5
DEFAULT_SWEEP_COUNT = 6

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits; non-finite floats become null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_str(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    return _json_scalar(obj)


def _json_str(s: str) -> str:
    return json.dumps(s)


def _json_scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(v, str):
        return _json_str(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


@dataclass
class PipelineResult:
    exit_code: int
    report: dict
    out_dir: Path


def _process(cfg: ExperimentConfig, grid: Grid) -> BranchingProcess:
    return build_process(grid, cfg.generators, cfg.structure, cfg.seed, cfg.coincidence_tol,
                         cfg.base_dir)


def _center_choice(cfg: ExperimentConfig, grid: Grid):
    plan_cfg = cfg.plan or {}
    policy = plan_cfg.get("policy", "explicit" if "centers" in plan_cfg else "uniform")
    centers = plan_cfg["centers"] if policy == "explicit" else None
    return choose_centers(cfg.m, grid, centers, bool(plan_cfg.get("real", False)))


def _plan(cfg: ExperimentConfig, grid: Grid):
    choice = _center_choice(cfg, grid)
    delta = (cfg.plan or {}).get("delta", "default")
    if delta == "default":
        delta = None
    elif delta == "max":
        delta = choice.delta_max
    return choice, choice.plan(delta)


def _write_process(out: Path, tag: str, p: BranchingProcess, spectra: bool = True) -> list[str]:
    names = []
    for d, sig in enumerate(p.branches, start=1):
        name = f"signals/{tag}_branch{d}.csv"
        write_signal_csv(out / name, sig)
        names.append(name)
        if spectra:
            name = f"spectra/{tag}_branch{d}.csv"
            write_spectrum_csv(out / name, forward_transform(sig))
            names.append(name)
    return names


def _has_file_branch(gens) -> bool:
    def walk(g):
        if g.get("kind") == "file":
            return True
        return any(walk(g[k]) for k in ("base", "divergence") if k in g)
    return any(walk(g) for g in gens)


def _stage_approximate(cfg, p, out, report, checks, artifacts):
    choice, plan = _plan(cfg, p.grid)
    report["plan"] = dict(plan.to_dict(), delta_max=choice.delta_max)
    checks["plan_disjoint"] = check_disjoint(plan)
    if not checks["plan_disjoint"]:
        raise PlanInvalid(f"bands {report['plan']['centers']} with delta={plan.delta} overlap "
                          "or select no bins")
    p_hat = degenerate_approximation(p, plan)
    deg = verify_degeneracy(p_hat, plan, BAND_TOL, original=p)
    report["degeneracy"] = deg.to_dict()
    checks["degeneracy"] = deg.passed
    errs = deg.errors
    report["approximation_error"] = [e.to_dict() for e in errs]
    pred2 = errs[0].predicted_l2 ** 2
    checks["error_identity"] = all(
        abs(e.l2_error ** 2 - pred2) <= ERROR_IDENTITY_RTOL * max(pred2, 1e-300) for e in errs)
    E = error_spectra(p, p_hat)
    spread = float(np.max(np.abs(E - E[0])))
    report["error_spectrum_spread"] = spread
    checks["error_spectrum_equal"] = spread <= BAND_TOL * deg.scale
    artifacts += _write_process(out, "approx", p_hat)
    return plan, p_hat


def _stage_recover(cfg, plan, p_hat, out, report, checks, artifacts):
    rc = cfg.recovery
    kw = dict(solver=rc.get("solver", "direct"), lam=rc.get("lambda"),
              max_iter=rc.get("max_iter", 10_000), tol=rc.get("tol", 1e-13))
    branch = rc.get("branch", 1)
    if rc["mode"] == "segment":
        r = extrapolate_from_segment(p_hat, plan, branch, cfg.recovery_interval(),
                                     full_recovery=rc.get("full_recovery", True), **kw)
    else:
        r = sample_reconstruct(p_hat, plan, rc["stride"], rc["s_index"], rc["omega"],
                               branch=branch, **kw)
    report["recovery"] = dict(r.to_dict(), mode=rc["mode"])
    checks["recovery_determined"] = r.recovered
    tol = rc.get("error_tol", DEFAULT_ERROR_TOL)
    errs = [r.rel_errors[d - 1] for d in r.branch_order]
    report["recovery"]["error_tol"] = tol
    checks["recovery_error"] = bool(r.recovered and max(errs) <= tol)
    artifacts += _write_process(out, "recovered", r.solution, spectra=False)


def _stage_sweep(cfg, out, report, checks, artifacts):
    sw = cfg.sweep or {}
    grid = cfg.grid
    choice = _center_choice(cfg, grid)
    deltas = sorted(sw.get("deltas") or halving_deltas(choice.delta_max, sw.get("count", DEFAULT_SWEEP_COUNT)),
                    reverse=True)
    min_bins = sw.get("min_bins", 4)
    centers = list(choice.centers)
    fine = refine_for_delta(grid, cfg.m, deltas[-1], centers, min_bins, real=choice.real)
    if fine != grid and _has_file_branch(cfg.generators):
        raise ConfigError("sweep: file-backed branches cannot be regenerated on a refined grid",
                          "sweep.deltas")
    p = _process(cfg, fine)
    rows = sweep_delta(p, choose_centers(cfg.m, fine, centers, choice.real), deltas)
    l2 = [r["l2_error"] for r in rows]
    report["sweep"] = {"grid": fine.to_dict(), "rows": rows}
    checks["sweep_monotone"] = all(b <= a for a, b in zip(l2, l2[1:]))
    lines = []
    for r in rows:
        for e in r["branches"]:
            lines.append((r["delta"], e["branch"], e["l2_error"], e["sup_error"],
                          e["predicted_l2"], r["min_bins"]))
    atomic_write(out / "sweep.csv", csv_text(SWEEP_HEADER, lines))
    artifacts.append("sweep.csv")
    if sw.get("eps"):
        dens = []
        for eps in sw["eps"]:
            res = find_delta(lambda g: _process(cfg, g), grid, eps, centers, min_bins, real=choice.real)
            dens.append(res.to_dict())
        report["density"] = dens
        checks["density"] = all(d["l2_error"] <= d["eps"] for d in dens)


def plot_rows(reports: Iterable[dict]) -> list[tuple]:
    rows = []
    for rep in reports:
        exp = rep.get("experiment", "experiment")
        for e in rep.get("approximation_error") or []:
            for metric in ("l2_error", "sup_error", "predicted_l2"):
                rows.append((exp, e["branch"], metric, e[metric]))
        deg = rep.get("degeneracy")
        if deg:
            for d, v in enumerate(deg["band_max"], start=1):
                rows.append((exp, d, "band_max", v))
        rec = rep.get("recovery")
        if rec and rec.get("rel_errors") is not None:
            for d, v in enumerate(rec["rel_errors"], start=1):
                rows.append((exp, d, "recovery_rel_error", v))
        for r in (rep.get("sweep") or {}).get("rows", []):
            key = f"{exp}@delta={format(r['delta'], '.17g')}"
            for e in r["branches"]:
                for metric in ("l2_error", "sup_error", "predicted_l2"):
                    rows.append((key, e["branch"], metric, e[metric]))
    return rows


def emit_plot_data(reports: Iterable[dict], path=None) -> str:
    """Long-format ``experiment,branch,metric,value`` CSV; written when ``path`` is given."""
    text = csv_text(PLOT_HEADER, plot_rows(reports))
    if path is not None:
        atomic_write(path, text)
    return text


def _error_dict(exc: BranchlineError) -> dict:
    error = {"code": exc.code, "message": str(exc)}
    if getattr(exc, "field", None):
        error["field"] = exc.field
    if getattr(exc, "path", None):
        error["path"] = exc.path
    return error


def write_error_report(out_dir, stage: str, exc: BranchlineError, timestamp: bool = True) -> dict:
    """Report for a run that failed before a config could be loaded."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"experiment": None, "stage": stage, "config": None, "checks": {},
              "error": _error_dict(exc), "status": "fail", "artifacts": [],
              "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat() if timestamp else None}
    atomic_write(out / "report.json", to_json(report) + "\n")
    return report


def run_pipeline(cfg: ExperimentConfig, stage: str = "report", out_dir=None,
                 timestamp: bool = True) -> PipelineResult:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    out = Path(out_dir if out_dir is not None else cfg.outputs)
    if cfg.base_dir is not None and not out.is_absolute() and out_dir is None:
        out = cfg.base_dir / out
    out.mkdir(parents=True, exist_ok=True)
    checks: dict = {}
    artifacts: list = []
    report: dict = {"experiment": cfg.name, "stage": stage, "config": cfg.raw}
    error = None
    try:
        grid = cfg.grid
        structure = cfg.structure
        val = validate_structure_set(structure, grid)
        report["validation"] = val.to_dict()
        checks["structure_valid"] = val.valid
        if not val.valid:
            raise InvalidInput("structure set invalid: " + "; ".join(val.violations))
        report["validation"]["connected"] = is_connected(structure)
        report["validation"]["components"] = components(structure)
        p = _process(cfg, grid)
        coin = verify_coincidence(p)
        report["validation"]["coincidence"] = coin.to_dict()
        report["validation"]["unlisted_coincidences"] = audit_coincidences(p)
        checks["input_coincidence"] = coin.passed
        artifacts += _write_process(out, "input", p)
        if stage in ("approximate", "recover") or (stage == "report" and cfg.plan is not None):
            plan, p_hat = _stage_approximate(cfg, p, out, report, checks, artifacts)
            if cfg.recovery is not None and stage in ("recover", "report"):
                _stage_recover(cfg, plan, p_hat, out, report, checks, artifacts)
        if stage == "sweep" or (stage == "report" and cfg.sweep is not None):
            _stage_sweep(cfg, out, report, checks, artifacts)
    except BranchlineError as exc:
        error = _error_dict(exc)
    report["checks"] = checks
    report["error"] = error
    passed = error is None and all(checks.values())
    report["status"] = "pass" if passed else "fail"
    emit_plot_data([report], out / "plot_data.csv")
    artifacts.append("plot_data.csv")
    report["artifacts"] = sorted(set(artifacts))
    report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat() if timestamp else None
    atomic_write(out / "report.json", to_json(report) + "\n")
    code = EXIT_OK if passed else (EXIT_ERROR if error is not None else EXIT_CHECK_FAILED)
    return PipelineResult(code, report, out)
