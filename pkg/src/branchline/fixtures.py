"""Signal generators and fixture assembly.

Generator specs are plain dicts (as they appear in experiment configs)::

    {"kind": "gaussian", "a": 1.0, "t_c": 0.0, "sigma": 2.0}
    {"kind": "modulated_gaussian", "a": 1.0, "t_c": 0.0, "sigma": 2.0, "omega0": 3.0}
    {"kind": "band_noise", "omega": 5.0, "seed": 42}
    {"kind": "scenario", "base": {...}, "divergence": {...}, "split_time": 0.0}
    {"kind": "file", "path": "x.csv"}

A scenario equals ``base`` before ``split_time`` and ``base + divergence``
from ``split_time`` on, so two scenarios sharing a base coincide exactly on
``t < split_time``.  Nesting scenarios builds trees.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .files import read_signal
from .model import BranchingProcess, Grid, IntervalSpec, Signal, StructureSet
from .spectral import inverse_array

GENERATOR_KINDS = ("gaussian", "modulated_gaussian", "band_noise", "scenario", "file")


def _param(spec: dict, name: str, where: str, positive: bool = False) -> float:
    if name not in spec:
        raise ConfigError(f"{where}: missing field {name!r}", f"{where}.{name}")
    v = spec[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}: field {name!r} must be a finite number", f"{where}.{name}")
    if positive and v <= 0:
        raise ConfigError(f"{where}: field {name!r} must be positive", f"{where}.{name}")
    return float(v)


def band_noise(grid: Grid, omega: float, seed: int, real: bool = False) -> np.ndarray:
    """Random signal whose spectrum is supported on bins with ``|w| < omega``.

    Normalised to unit peak magnitude.
    """
    rng = np.random.default_rng(seed)
    inside = np.abs(grid.omegas) < omega
    X = np.zeros(grid.n, dtype=complex)
    X[inside] = rng.standard_normal(inside.sum()) + 1j * rng.standard_normal(inside.sum())
    x = inverse_array(X, grid)
    if real:
        x = x.real.astype(complex)
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def generate_signal(spec: dict, grid: Grid, seed: Optional[int] = None,
                    where: str = "generator", base_dir: Optional[Path] = None) -> np.ndarray:
    """Sample one generator spec on ``grid``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where}: generator needs a 'kind'", f"{where}.kind")
    kind = spec["kind"]
    t = grid.times
    if kind in ("gaussian", "modulated_gaussian"):
        a = _param(spec, "a", where)
        tc = _param(spec, "t_c", where)
        sigma = _param(spec, "sigma", where, positive=True)
        x = a * np.exp(-((t - tc) ** 2) / (2 * sigma ** 2)) + 0j
        if kind == "modulated_gaussian":
            x = x * np.exp(1j * _param(spec, "omega0", where) * t)
        return x
    if kind == "band_noise":
        omega = _param(spec, "omega", where, positive=True)
        s = spec.get("seed", seed)
        if s is None:
            raise ConfigError(f"{where}: band_noise needs a seed", f"{where}.seed")
        return band_noise(grid, omega, int(s), bool(spec.get("real", False)))
    if kind == "scenario":
        for key in ("base", "divergence"):
            if key not in spec:
                raise ConfigError(f"{where}: missing field {key!r}", f"{where}.{key}")
        split = _param(spec, "split_time", where)
        base = generate_signal(spec["base"], grid, seed, f"{where}.base", base_dir)
        div = generate_signal(spec["divergence"], grid, seed, f"{where}.divergence", base_dir)
        return base + np.where(t >= split, div, 0.0)
    if kind == "file":
        if "path" not in spec:
            raise ConfigError(f"{where}: missing field 'path'", f"{where}.path")
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return read_signal(path, grid, spec.get("format")).samples
    raise ConfigError(f"{where}: unknown generator kind {kind!r}", f"{where}.kind")


def build_process(grid: Grid, generators: list, structure: StructureSet,
                  seed: Optional[int] = None, coincidence_tol: float = 1e-9,
                  base_dir: Optional[Path] = None) -> BranchingProcess:
    arrays = [generate_signal(g, grid, seed, f"branches[{i}]", base_dir)
              for i, g in enumerate(generators)]
    return BranchingProcess(grid, tuple(Signal(grid, a) for a in arrays), structure,
                            coincidence_tol)


def gaussian_pair(grid: Grid, split_time: float = 0.0) -> BranchingProcess:
    """Two branches sharing a Gaussian past, the second picking up a bump later.

    The bump is centred well after the split so the jump it introduces there
    is below 1e-8 and the spectra stay close to smooth.
    """
    base = {"kind": "gaussian", "a": 1.0, "t_c": 0.0, "sigma": 1.0}
    gens = [base, {"kind": "scenario", "base": base, "split_time": split_time,
                   "divergence": {"kind": "gaussian", "a": 0.5, "t_c": split_time + 6.0, "sigma": 1.0}}]
    s = StructureSet.build(2, [(1, 2, IntervalSpec.left(split_time))])
    return build_process(grid, gens, s)

