"""Run configuration: JSON schema, validation, game construction.

Validation errors carry the dotted path of the offending field so the
CLI can name it.  The documented schema lives in the README; bundled
example configs ship under ``nashbsde/configs``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .games import GameSpec, GbmGameParams, LqGameParams, builtin_game, gbm_extension_game, lq_game
from .sde import TimeGrid
from .smoothing import MollifyParams
from .solver import RegressionBasis

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "bundled_config_path"]

SEED_ENV_VAR = "NASHBSDE_SEED"

_LQ_PARAM_FIELDS = set(LqGameParams.__dataclass_fields__)
_GBM_PARAM_FIELDS = set(GbmGameParams.__dataclass_fields__)


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _require(table: dict, key: str, parent: str):
    if key not in table:
        raise ConfigError(f"{parent}.{key}" if parent else key, "missing")
    return table[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, "must be a number")
    out = float(value)
    if not np.isfinite(out):
        raise ConfigError(path, "must be finite")
    return out


def _integer(value, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, "must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return value


@dataclass
class RunConfig:
    """Validated run parameters for every subcommand."""

    game: GameSpec
    x0: np.ndarray
    grid: TimeGrid
    n_paths: int
    seed: int
    basis: RegressionBasis
    mollify: Optional[MollifyParams]
    simulate: dict
    nash: dict
    isaacs: dict
    generator: dict
    density: dict
    output_dir: Path
    raw: dict = field(repr=False, default_factory=dict)


def _build_game(table, path: str) -> GameSpec:
    if not isinstance(table, dict):
        raise ConfigError(path, "must be a table")
    if ("builtin" in table) == ("inline" in table):
        raise ConfigError(path, "exactly one of 'builtin' or 'inline' is required")
    if "builtin" in table:
        name = table["builtin"]
        if name not in ("lq", "gbm_extension"):
            raise ConfigError(f"{path}.builtin", f"unknown game {name!r}")
        params = table.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError(f"{path}.params", "must be a table")
        allowed = _LQ_PARAM_FIELDS if name == "lq" else _GBM_PARAM_FIELDS
        for key in params:
            if key not in allowed:
                raise ConfigError(f"{path}.params.{key}", "unknown parameter")
        try:
            return builtin_game(name, **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.params", str(exc)) from exc
    inline = table["inline"]
    if not isinstance(inline, dict):
        raise ConfigError(f"{path}.inline", "must be a table")
    dynamics = inline.get("dynamics", "linear")
    coeffs = {k: v for k, v in inline.items() if k != "dynamics"}
    try:
        if dynamics == "linear":
            return lq_game(**coeffs)
        if dynamics == "state_scaled":
            return gbm_extension_game(**coeffs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.inline", str(exc)) from exc
    raise ConfigError(f"{path}.inline.dynamics",
                      "must be 'linear' or 'state_scaled'")


def parse_config(doc: dict) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("", "top-level config must be a JSON object")
    game = _build_game(_require(doc, "game", ""), "game")

    grid_tab = _require(doc, "grid", "")
    if not isinstance(grid_tab, dict):
        raise ConfigError("grid", "must be a table")
    t0 = _number(_require(grid_tab, "t0", "grid"), "grid.t0")
    T = _number(_require(grid_tab, "T", "grid"), "grid.T")
    n_steps = _integer(_require(grid_tab, "n_steps", "grid"), "grid.n_steps", 1)
    if not T > t0:
        raise ConfigError("grid.T", "must exceed grid.t0")
    grid = TimeGrid(t0, T, n_steps)

    mc = _require(doc, "monte_carlo", "")
    if not isinstance(mc, dict):
        raise ConfigError("monte_carlo", "must be a table")
    n_paths = _integer(_require(mc, "n_paths", "monte_carlo"), "monte_carlo.n_paths", 1)
    seed = _integer(_require(mc, "seed", "monte_carlo"), "monte_carlo.seed", 0)
    if seed >= 2 ** 64:
        raise ConfigError("monte_carlo.seed", "must fit in 64 bits")
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError("monte_carlo.seed",
                              f"environment override {SEED_ENV_VAR} is not an integer") from None

    if "x0" in doc:
        x0_raw = doc["x0"]
        if isinstance(x0_raw, (int, float)) and not isinstance(x0_raw, bool):
            x0 = np.array([float(x0_raw)])
        elif isinstance(x0_raw, list):
            x0 = np.array([_number(v, f"x0[{i}]") for i, v in enumerate(x0_raw)])
        else:
            raise ConfigError("x0", "must be a number or a list of numbers")
        if x0.size != game.dim_m:
            raise ConfigError("x0", f"must have {game.dim_m} coordinates")
    else:
        x0 = game.default_x0.copy()

    basis_tab = doc.get("basis", {"kind": "global_poly", "degree": 4})
    if not isinstance(basis_tab, dict):
        raise ConfigError("basis", "must be a table")
    kind = basis_tab.get("kind", "global_poly")
    if kind not in ("global_poly", "local_partition"):
        raise ConfigError("basis.kind", "must be 'global_poly' or 'local_partition'")
    degree = _integer(basis_tab.get("degree", 4), "basis.degree", 0)
    cells = _integer(basis_tab.get("cells_per_axis", 4), "basis.cells_per_axis", 1)
    log_state = basis_tab.get("log_state", False)
    if not isinstance(log_state, bool):
        raise ConfigError("basis.log_state", "must be a boolean")
    dlo = basis_tab.get("domain_lo")
    dhi = basis_tab.get("domain_hi")
    try:
        basis = RegressionBasis(kind=kind, degree=degree, cells_per_axis=cells,
                                domain_lo=None if dlo is None else np.asarray(dlo, dtype=float),
                                domain_hi=None if dhi is None else np.asarray(dhi, dtype=float),
                                log_state=log_state)
    except ValueError as exc:
        raise ConfigError("basis", str(exc)) from exc

    mollify = None
    if "mollify" in doc and doc["mollify"] is not None:
        mt = doc["mollify"]
        if not isinstance(mt, dict):
            raise ConfigError("mollify", "must be a table")
        try:
            mollify = MollifyParams(
                level=_integer(_require(mt, "level", "mollify"), "mollify.level", 1),
                quad_points=_integer(mt.get("quad_points", 15), "mollify.quad_points", 3),
                mollifier_radius=_number(mt.get("mollifier_radius", 1.0),
                                         "mollify.mollifier_radius"),
            )
        except ValueError as exc:
            raise ConfigError("mollify", str(exc)) from exc

    simulate = dict(doc.get("simulate", {}))
    if "csv_max_paths" in simulate and simulate["csv_max_paths"] is not None:
        simulate["csv_max_paths"] = _integer(simulate["csv_max_paths"],
                                             "simulate.csv_max_paths", 1)
    else:
        simulate["csv_max_paths"] = None

    nash = dict(doc.get("nash", {}))
    nash.setdefault("constants", 9)
    nash.setdefault("bang_bang", 4)
    nash.setdefault("perturbed_feedback", 5)
    nash.setdefault("rel_tol", 0.01)
    nash.setdefault("family_seed", 7)
    nash.setdefault("w0_rel_allowance", 0.02)

    isaacs = dict(doc.get("isaacs", {}))
    isaacs.setdefault("sample_count", 100)
    isaacs.setdefault("grid_n", 201)
    isaacs.setdefault("seed", 3)

    generator = dict(doc.get("generator", {}))
    generator.setdefault("levels", [4, 8, 16])
    generator.setdefault("sample_count", 200)
    generator.setdefault("seed", 5)
    generator.setdefault("quad_points", 15)

    density = dict(doc.get("density", {}))
    density.setdefault("sigma", 1.0)
    density.setdefault("t0", 0.0)
    density.setdefault("x0", 0.0)
    density.setdefault("aronson", {"rho1": 0.1, "rho2": 1.0,
                                   "lambda_small": 0.4, "lambda_big": 0.6})
    density.setdefault("grid", {"s_min": 0.1, "s_max": 1.0, "n_s": 10,
                                "x_halfwidth": 2.0, "n_x": 41})
    density.setdefault("domination", {"delta": 0.1, "k": 3.0, "q": 2.0})
    density.setdefault("mass_tol", 1e-4)

    out_dir = _require(doc, "output_dir", "")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output_dir", "must be a non-empty string")

    return RunConfig(game=game, x0=x0, grid=grid, n_paths=n_paths, seed=seed,
                     basis=basis, mollify=mollify, simulate=simulate, nash=nash,
                     isaacs=isaacs, generator=generator, density=density,
                     output_dir=Path(out_dir), raw=doc)


def bundled_config_path(name: str) -> Path:
    """Filesystem path of a config shipped with the package."""
    candidate = resources.files("nashbsde").joinpath("configs", f"{name}.json")
    with resources.as_file(candidate) as p:
        return Path(p)


def load_config(path_or_name: str) -> RunConfig:
    """Load a config from a file path or a bundled name like ``lq_paper``."""
    p = Path(path_or_name)
    if not p.exists() and not path_or_name.endswith(".json"):
        p = bundled_config_path(path_or_name)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path_or_name!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    return parse_config(doc)
