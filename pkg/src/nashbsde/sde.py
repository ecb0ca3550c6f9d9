"""Forward path simulation and change-of-measure weights.

Paths are generated from counter-based random streams: the Gaussian
increments of path j depend only on (seed, j, step), never on how many
paths are requested.  Enlarging an ensemble therefore nests the smaller
one exactly, which is what makes variance comparisons across run sizes
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "SimulationError",
    "TimeGrid",
    "PathBundle",
    "path_increments",
    "simulate_reference",
    "simulate_controlled",
    "girsanov_weight",
]

# paths are drawn in fixed-size blocks so stream layout never depends on
# the requested ensemble size
_BLOCK = 256


class SimulationError(RuntimeError):
    """Non-finite value produced while integrating a path."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 = t_0 < ... < t_K = T with K = n_steps."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        if not self.T > self.t0:
            raise ValueError("T must exceed t0")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @cached_property
    def knots(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class PathBundle:
    """Immutable Monte Carlo ensemble on a time grid.

    ``brownian_increments`` has shape (n_paths, n_steps, m) and
    ``states`` shape (n_paths, n_steps + 1, m); states[:, 0] is the
    common start point.
    """

    grid: TimeGrid
    n_paths: int
    brownian_increments: np.ndarray
    states: np.ndarray
    seed: int
    scheme_tag: str  # "reference" or "controlled"

    def __post_init__(self):
        if self.scheme_tag not in ("reference", "controlled"):
            raise ValueError("scheme_tag must be 'reference' or 'controlled'")


def _block_normals(seed: int, block: int, n_steps: int, m: int) -> np.ndarray:
    key = np.array([np.uint64(seed), np.uint64(block)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((_BLOCK, n_steps, m))


def _normals(seed: int, n_paths: int, n_steps: int, m: int) -> np.ndarray:
    n_blocks = (n_paths + _BLOCK - 1) // _BLOCK
    parts = [_block_normals(seed, b, n_steps, m) for b in range(n_blocks)]
    return np.concatenate(parts, axis=0)[:n_paths]


def path_increments(seed: int, path_index: int, grid: TimeGrid, m: int) -> np.ndarray:
    """Brownian increments of one path, reconstructed from (seed, index) alone."""
    block, row = divmod(path_index, _BLOCK)
    raw = _block_normals(seed, block, grid.n_steps, m)[row]
    return raw * np.sqrt(grid.dt)


def _check_finite(arr: np.ndarray, step: int, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0][0])
        raise SimulationError(f"non-finite {what} at step {step}, path {bad}")


def _euler(spec, grid: TimeGrid, x0, n_paths: int, seed: int, drift_fn=None) -> PathBundle:
    m = spec.dim_m
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (m,):
        raise ValueError(f"x0 must have shape ({m},)")
    dt = grid.dt
    incr = _normals(seed, n_paths, grid.n_steps, m) * np.sqrt(dt)
    states = np.empty((n_paths, grid.n_steps + 1, m))
    states[:, 0] = x0
    x = np.tile(x0, (n_paths, 1))
    for k in range(grid.n_steps):
        t = grid.knots[k]
        sig = np.asarray(spec.sigma(t, x), dtype=float)
        _check_finite(sig, k, "diffusion coefficient")
        step = np.einsum("nij,nj->ni", sig, incr[:, k])
        if drift_fn is not None:
            f = drift_fn(k, t, x)
            _check_finite(f, k, "drift")
            step = step + f * dt
        # overflow surfaces as the explicit finiteness error below
        with np.errstate(over="ignore"):
            x = x + step
        _check_finite(x, k, "state")
        states[:, k + 1] = x
    tag = "reference" if drift_fn is None else "controlled"
    return PathBundle(grid=grid, n_paths=n_paths, brownian_increments=incr,
                      states=states, seed=seed, scheme_tag=tag)


def simulate_reference(spec, grid: TimeGrid, x0, n_paths: int, seed: int) -> PathBundle:
    """Driftless Euler paths dX = sigma(t, X) dB from x0, reproducible by seed."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    return _euler(spec, grid, x0, n_paths, seed)


def controls_at(spec, feedbacks, z_source, t: float, x: np.ndarray):
    """Evaluate a feedback pair at (t, x) with z values from the solution.

    ``z_source`` is anything exposing ``eval_z(player, t, x)``; with None
    the feedbacks receive zero z arrays.
    """
    n = x.shape[0]
    if z_source is None:
        z1 = np.zeros((n, spec.dim_m))
        z2 = np.zeros((n, spec.dim_m))
    elif hasattr(z_source, "eval_z_both"):
        z1, z2 = z_source.eval_z_both(t, x)
    else:
        z1 = np.atleast_2d(z_source.eval_z(1, t, x))
        z2 = np.atleast_2d(z_source.eval_z(2, t, x))
    u = np.atleast_2d(np.asarray(feedbacks[0](t, x, z1, z2), dtype=float))
    v = np.atleast_2d(np.asarray(feedbacks[1](t, x, z1, z2), dtype=float))
    return u, v


def simulate_controlled(spec, grid: TimeGrid, x0, feedbacks, z_source,
                        n_paths: int, seed: int) -> PathBundle:
    """Euler paths of the controlled dynamics dX = f dt + sigma dB.

    The feedbacks are evaluated along the simulated path; with the same
    seed and zero drift this reproduces ``simulate_reference`` exactly.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")

    def drift_fn(k, t, x):
        u, v = controls_at(spec, feedbacks, z_source, t, x)
        return np.asarray(spec.drift_f(t, x, u, v), dtype=float)

    return _euler(spec, grid, x0, n_paths, seed, drift_fn=drift_fn)


def girsanov_weight(spec, bundle: PathBundle, feedbacks, z_source=None) -> np.ndarray:
    """Per-path change-of-measure weights tilting driftless paths to controlled law.

    Left-point discretization of exp(int eta dB - 1/2 int |eta|^2 dt)
    with eta = sigma_inv(t, X) f(t, X, u, v); accumulated in log space and
    exponentiated once.
    """
    if bundle.scheme_tag != "reference":
        raise ValueError("weights are defined on reference-measure bundles only")
    grid = bundle.grid
    dt = grid.dt
    log_w = np.zeros(bundle.n_paths)
    for k in range(grid.n_steps):
        t = grid.knots[k]
        x = bundle.states[:, k]
        u, v = controls_at(spec, feedbacks, z_source, t, x)
        f = np.asarray(spec.drift_f(t, x, u, v), dtype=float)
        sig_inv = np.asarray(spec.sigma_inv(t, x), dtype=float)
        eta = np.einsum("nij,nj->ni", sig_inv, f)
        _check_finite(eta, k, "Girsanov integrand")
        log_w += np.einsum("ni,ni->n", eta, bundle.brownian_increments[:, k])
        log_w -= 0.5 * dt * np.einsum("ni,ni->n", eta, eta)
    w = np.exp(log_w)
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        bad = int(np.argwhere(~(np.isfinite(w) & (w > 0.0)))[0][0])
        raise SimulationError(f"invalid Girsanov weight on path {bad}")
    return w
