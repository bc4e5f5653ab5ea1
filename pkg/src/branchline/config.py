"""Experiment configuration: JSON, schema-checked, unknown fields rejected."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError, DataFileError
from .model import Grid, IntervalSpec, StructureSet, StructureTriple

_SCHEMA = None


def schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        _SCHEMA = json.loads(resources.files("branchline").joinpath("config.schema.json").read_text())
    return _SCHEMA


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else (f".{p}" if parts else str(p)))
    return "".join(parts) or "<root>"


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Optional[Path] = None

    @property
    def name(self) -> str:
        return self.raw.get("name", "experiment")

    @property
    def grid(self) -> Grid:
        g = self.raw["grid"]
        return Grid(float(g["t0"]), float(g["dt"]), int(g["n"]))

    @property
    def generators(self) -> list:
        return self.raw["branches"]

    @property
    def m(self) -> int:
        return len(self.raw["branches"])

    @property
    def structure(self) -> StructureSet:
        return StructureSet(self.m, tuple(StructureTriple.from_dict(t) for t in self.raw["structure_set"]))

    @property
    def plan(self) -> Optional[dict]:
        return self.raw.get("plan")

    @property
    def recovery(self) -> Optional[dict]:
        return self.raw.get("recovery")

    @property
    def sweep(self) -> Optional[dict]:
        return self.raw.get("sweep")

    @property
    def seed(self) -> Optional[int]:
        return self.raw.get("seed")

    @property
    def coincidence_tol(self) -> float:
        return float(self.raw.get("coincidence_tol", 1e-9))

    @property
    def outputs(self) -> str:
        return self.raw.get("outputs", "out")

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return parse_config(raw, self.base_dir)

    def recovery_interval(self) -> IntervalSpec:
        return IntervalSpec.from_dict(self.recovery["interval"])


def parse_config(raw: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validate ``raw`` against the schema plus the cross-field rules."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"{_field_path(err)}: {err.message}", _field_path(err))
    plan = raw.get("plan") or {}
    if plan.get("policy") == "explicit" and "centers" not in plan:
        raise ConfigError("plan.centers: explicit policy needs centers", "plan.centers")
    if "centers" in plan and plan.get("policy", "explicit") == "explicit" \
            and len(plan["centers"]) != len(raw["branches"]):
        raise ConfigError("plan.centers: need one centre per branch", "plan.centers")
    rec = raw.get("recovery")
    if rec is not None:
        needed = ("interval",) if rec["mode"] == "segment" else ("stride", "s_index", "omega")
        for key in needed:
            if key not in rec:
                raise ConfigError(f"recovery.{key}: required for mode {rec['mode']!r}", f"recovery.{key}")
        if rec.get("branch", 1) > len(raw["branches"]):
            raise ConfigError("recovery.branch: no such branch", "recovery.branch")
    return ExperimentConfig(raw, base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFileError(f"cannot read config {path}: {exc.strerror}", str(path)) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(raw, path.parent)
