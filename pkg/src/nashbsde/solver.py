"""Coupled backward-equation solver via least-squares Monte Carlo.

Backward induction over the time grid: at each knot the gradient
processes of both players are regressed from the martingale-increment
identity, the best responses close the coupling between the two
players' gradient fields, and the value processes are regressed from
the one-step generator update.  The output is a pair of deterministic
functions per player (value and gradient), represented by regression
coefficients on a fixed basis, evaluable anywhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .games import GameSpec, hamiltonian_batch
from .sde import PathBundle, TimeGrid
from .smoothing import MollifyParams, mollified_generator_batch

__all__ = [
    "RegressionError",
    "RegressionBasis",
    "BsdeSolution",
    "solve_coupled",
    "GrowthReport",
    "growth_diagnostic",
    "growth_stability",
]

_RIDGE = 1e-10
_COND_LIMIT = 1e12


class RegressionError(RuntimeError):
    """Least-squares projection failed at a specific knot."""


@dataclass
class RegressionBasis:
    """Basis spec: global polynomials or a partitioned local polynomial family.

    ``domain_box`` is fitted to the simulated cloud when left unset and
    frozen into the solution afterwards.  ``log_state`` switches the
    polynomial coordinates to the logarithm of the state, the natural
    chart for positive multiplicative diffusions whose clouds are heavy
    tailed in the original coordinates.
    """

    kind: str = "global_poly"
    degree: int = 2
    cells_per_axis: int = 4
    domain_lo: Optional[np.ndarray] = None
    domain_hi: Optional[np.ndarray] = None
    log_state: bool = False

    def __post_init__(self):
        if self.kind not in ("global_poly", "local_partition"):
            raise ValueError("basis kind must be 'global_poly' or 'local_partition'")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if self.kind == "local_partition" and self.cells_per_axis < 1:
            raise ValueError("cells_per_axis must be positive")
        if self.domain_lo is not None:
            self.domain_lo = np.atleast_1d(np.asarray(self.domain_lo, dtype=float))
        if self.domain_hi is not None:
            self.domain_hi = np.atleast_1d(np.asarray(self.domain_hi, dtype=float))
        if self.log_state and self.domain_lo is not None and np.any(self.domain_lo <= 0):
            raise ValueError("log_state requires a strictly positive domain box")


def _monomial_exponents(m: int, degree: int):
    exps = [e for e in itertools.product(range(degree + 1), repeat=m)
            if sum(e) <= degree]
    exps.sort()
    return np.array(exps, dtype=int)


class _BasisOps:
    """Concrete evaluation/fitting engine behind a RegressionBasis."""

    def __init__(self, basis: RegressionBasis, m: int):
        if basis.domain_lo is None or basis.domain_hi is None:
            raise ValueError("basis domain box must be resolved before use")
        self.basis = basis
        self.m = m
        if basis.log_state:
            self.lo = np.log(basis.domain_lo)
            self.hi = np.log(basis.domain_hi)
        else:
            self.lo = basis.domain_lo
            self.hi = basis.domain_hi
        self.width = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        self.exponents = _monomial_exponents(m, basis.degree)
        self.nb_local = self.exponents.shape[0]
        if basis.kind == "global_poly":
            self.n_cells = 1
        else:
            self.n_cells = basis.cells_per_axis ** m
        self.n_coeffs = self.n_cells * self.nb_local

    def _scale(self, x):
        if self.basis.log_state:
            # the floor keeps stray nonpositive queries finite; fits only
            # ever see the simulated positive cloud
            x = np.log(np.maximum(x, 1e-300))
        return 2.0 * (x - self.lo) / self.width - 1.0

    def _design_local(self, x_scaled):
        n = x_scaled.shape[0]
        deg = self.basis.degree
        # per-coordinate power tables, built by cumulative products
        pows = np.empty((self.m, deg + 1, n))
        pows[:, 0] = 1.0
        for c in range(self.m):
            for p in range(1, deg + 1):
                np.multiply(pows[c, p - 1], x_scaled[:, c], out=pows[c, p])
        out = np.empty((n, self.nb_local))
        for j, e in enumerate(self.exponents):
            col = pows[0, e[0]]
            for c in range(1, self.m):
                if e[c]:
                    col = col * pows[c, e[c]]
            out[:, j] = col
        return out

    def _cells(self, x_scaled):
        """Flat cell index plus cell-local coordinates in [-1, 1]."""
        cpa = self.basis.cells_per_axis
        idx = np.clip(((x_scaled + 1.0) / 2.0 * cpa).astype(int), 0, cpa - 1)
        flat = np.zeros(x_scaled.shape[0], dtype=int)
        for c in range(self.m):
            flat = flat * cpa + idx[:, c]
        centers = -1.0 + (2.0 * idx + 1.0) / cpa
        local = (x_scaled - centers) * cpa
        return flat, local

    def prepare(self, x) -> "_PreparedDesign":
        """Precompute the design matrix and normal factorization at a cloud."""
        return _PreparedDesign(self, np.atleast_2d(x))

    def fit(self, x, y, knot=-1):
        return self.prepare(x).fit(y, knot)

    def predict(self, x, coeffs):
        return self.prepare(x).predict(coeffs)


class _PreparedDesign:
    """Design matrix, cell assignment and cached normal solves at one cloud.

    The normal matrix is shared by every regression at a knot, so it is
    assembled (fixed-order einsum, thread-count independent) and
    condition-checked once; each fit is then one stacked solve.
    """

    def __init__(self, ops: _BasisOps, x: np.ndarray):
        self.ops = ops
        self.n = x.shape[0]
        spread = x.max(axis=0) - x.min(axis=0) if self.n > 1 else np.zeros(ops.m)
        self.degenerate = bool(np.all(spread < 1e-12))
        xs = ops._scale(x)
        self._factor = {}
        if ops.basis.kind == "global_poly":
            self.cells = None
            self.phi = ops._design_local(xs)
        else:
            self.cells, local = ops._cells(xs)
            self.phi = ops._design_local(local)
            self._masks = {int(c): self.cells == c for c in np.unique(self.cells)}

    def _normal(self, phi, cell, knot):
        cached = self._factor.get(cell)
        if cached is None:
            n = phi.shape[0]
            g = np.einsum("ni,nj->ij", phi, phi, optimize=False) / n
            # condition number of the design matrix, i.e. sqrt of the
            # normal matrix's
            cond = float(np.sqrt(np.linalg.cond(g)))
            if not np.isfinite(cond) or cond > _COND_LIMIT:
                raise RegressionError(
                    f"singular regression at knot {knot} (condition number {cond:.3e})")
            g_r = g + _RIDGE * np.eye(g.shape[0])
            cached = (g_r, cond)
            self._factor[cell] = cached
        return cached

    def fit_many(self, targets: np.ndarray, knot=-1):
        """Coefficients for several targets at once; targets shape (n, r).

        Returns (coeffs (n_coeffs, r), max condition number).  Degenerate
        clouds (e.g. the deterministic start knot) collapse every cell to
        the plain target mean.
        """
        ops = self.ops
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if targets.shape[0] != self.n:
            targets = targets.T
        r = targets.shape[1]
        coeffs = np.zeros((ops.n_coeffs, r))
        if self.degenerate:
            coeffs[0::ops.nb_local, :] = np.mean(targets, axis=0)
            return coeffs, 1.0
        if ops.basis.kind == "global_poly":
            g_r, cond = self._normal(self.phi, 0, knot)
            b = np.einsum("ni,nr->ir", self.phi, targets, optimize=False) / self.n
            coeffs[:, :] = np.linalg.solve(g_r, b)
            return coeffs, cond
        overall = np.mean(targets, axis=0)
        cond_max = 1.0
        for cell in range(ops.n_cells):
            base = cell * ops.nb_local
            mask = self._masks.get(cell)
            cnt = 0 if mask is None else int(mask.sum())
            if cnt == 0:
                coeffs[base, :] = overall
                continue
            if cnt < 2 * ops.nb_local:
                coeffs[base, :] = np.mean(targets[mask], axis=0)
                continue
            phi = self.phi[mask]
            g_r, cond = self._normal(phi, cell, knot)
            b = np.einsum("ni,nr->ir", phi, targets[mask], optimize=False) / cnt
            coeffs[base:base + ops.nb_local, :] = np.linalg.solve(g_r, b)
            cond_max = max(cond_max, cond)
        return coeffs, cond_max

    def fit(self, y, knot=-1):
        coeffs, cond = self.fit_many(np.asarray(y, dtype=float)[:, None], knot)
        return coeffs[:, 0], cond

    def predict(self, coeffs):
        ops = self.ops
        if ops.basis.kind == "global_poly":
            return self.phi @ coeffs
        out = np.empty(self.n)
        for cell, mask in self._masks.items():
            base = cell * ops.nb_local
            out[mask] = self.phi[mask] @ coeffs[base:base + ops.nb_local]
        return out


@dataclass
class BsdeSolution:
    """Regression representation of both players' value and gradient maps.

    ``coeffs_y`` has shape (2, n_steps + 1, n_coeffs); ``coeffs_z`` shape
    (2, n_steps, n_coeffs, m), left-point in time.  Evaluation between
    knots uses the earlier knot's coefficients.
    """

    grid: TimeGrid
    basis: RegressionBasis
    dim_m: int
    coeffs_y: np.ndarray
    coeffs_z: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self._ops = _BasisOps(self.basis, self.dim_m)

    def _knot(self, t: float, for_z: bool) -> int:
        k = int(np.floor((t - self.grid.t0) / self.grid.dt + 1e-9))
        hi = self.grid.n_steps - 1 if for_z else self.grid.n_steps
        return min(max(k, 0), hi)

    def _flag_extrapolation(self, x):
        if np.any(x < self.basis.domain_lo) or np.any(x > self.basis.domain_hi):
            self.diagnostics["extrapolation_seen"] = True

    def eval_w(self, player: int, t: float, x):
        """Value map of one player at (t, x); x may be a point or a batch."""
        x_arr = np.atleast_2d(np.asarray(x, dtype=float))
        self._flag_extrapolation(x_arr)
        out = self._ops.predict(x_arr, self.coeffs_y[player - 1, self._knot(t, False)])
        return float(out[0]) if np.asarray(x).ndim <= 1 else out

    def eval_z(self, player: int, t: float, x):
        """Gradient-process map of one player at (t, x)."""
        x_arr = np.atleast_2d(np.asarray(x, dtype=float))
        self._flag_extrapolation(x_arr)
        k = self._knot(t, True)
        prep = self._ops.prepare(x_arr)
        cz = self.coeffs_z[player - 1, k]
        out = np.stack([prep.predict(cz[:, j]) for j in range(self.dim_m)], axis=1)
        return out[0] if np.asarray(x).ndim <= 1 else out

    def eval_z_both(self, t: float, x):
        """Both players' gradient maps at (t, x) with one design build."""
        x_arr = np.atleast_2d(np.asarray(x, dtype=float))
        self._flag_extrapolation(x_arr)
        k = self._knot(t, True)
        prep = self._ops.prepare(x_arr)
        outs = []
        for player in (1, 2):
            cz = self.coeffs_z[player - 1, k]
            outs.append(np.stack([prep.predict(cz[:, j]) for j in range(self.dim_m)],
                                 axis=1))
        return outs[0], outs[1]

    def to_doc(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "bsde_solution",
            "grid": {"t0": self.grid.t0, "T": self.grid.T, "n_steps": self.grid.n_steps},
            "dim_m": self.dim_m,
            "basis": {
                "kind": self.basis.kind,
                "degree": self.basis.degree,
                "cells_per_axis": self.basis.cells_per_axis,
                "domain_lo": self.basis.domain_lo.tolist(),
                "domain_hi": self.basis.domain_hi.tolist(),
                "log_state": self.basis.log_state,
            },
            "coeffs_y": self.coeffs_y.tolist(),
            "coeffs_z": self.coeffs_z.tolist(),
            "diagnostics": _plain(self.diagnostics),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "BsdeSolution":
        g = doc["grid"]
        basis = RegressionBasis(
            kind=doc["basis"]["kind"],
            degree=int(doc["basis"]["degree"]),
            cells_per_axis=int(doc["basis"]["cells_per_axis"]),
            domain_lo=np.asarray(doc["basis"]["domain_lo"], dtype=float),
            domain_hi=np.asarray(doc["basis"]["domain_hi"], dtype=float),
            log_state=bool(doc["basis"].get("log_state", False)),
        )
        return cls(
            grid=TimeGrid(float(g["t0"]), float(g["T"]), int(g["n_steps"])),
            basis=basis,
            dim_m=int(doc["dim_m"]),
            coeffs_y=np.asarray(doc["coeffs_y"], dtype=float),
            coeffs_z=np.asarray(doc["coeffs_z"], dtype=float),
            diagnostics=dict(doc.get("diagnostics", {})),
        )


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _resolve_domain(basis: RegressionBasis, states: np.ndarray) -> RegressionBasis:
    if basis.domain_lo is not None and basis.domain_hi is not None:
        return basis
    lo = states.min(axis=(0, 1))
    hi = states.max(axis=(0, 1))
    if basis.log_state:
        if np.any(lo <= 0):
            raise ValueError("log_state basis requires strictly positive states")
        pad = 1.0 + 1e-9
        lo, hi = lo / pad, hi * pad
    else:
        pad = 1e-9 + 1e-9 * np.abs(hi - lo)
        lo, hi = lo - pad, hi + pad
    return RegressionBasis(kind=basis.kind, degree=basis.degree,
                           cells_per_axis=basis.cells_per_axis,
                           domain_lo=lo, domain_hi=hi, log_state=basis.log_state)


def solve_coupled(spec: GameSpec, bundle: PathBundle, basis: RegressionBasis,
                  mollify: Optional[MollifyParams] = None,
                  picard_max: int = 8, picard_tol: float = 1e-10) -> BsdeSolution:
    """Solve the two-player coupled backward system on a reference bundle.

    Each backward step regresses the gradient processes from the
    martingale-increment identity, then fixed-point iterates the value
    regression (initialized from the previous knot's coefficients) until
    the coefficient update falls below ``picard_tol``.  The generator is
    the raw Hamiltonian composed with the best responses, or its
    regularized version when ``mollify`` is given.
    """
    if bundle.scheme_tag != "reference":
        raise ValueError("solver requires a reference-measure bundle")
    if spec.best_response is None:
        raise ValueError("solver requires best-response maps on the game")
    if picard_max < 1:
        raise ValueError("picard_max must be at least 1")
    grid = bundle.grid
    m = spec.dim_m
    n_paths = bundle.n_paths
    basis = _resolve_domain(basis, bundle.states)
    ops = _BasisOps(basis, m)
    if ops.n_coeffs > n_paths / 10:
        raise ValueError(
            f"basis too rich: {ops.n_coeffs} coefficients for {n_paths} paths")

    K = grid.n_steps
    dt = grid.dt
    coeffs_y = np.zeros((2, K + 1, ops.n_coeffs))
    coeffs_z = np.zeros((2, K, ops.n_coeffs, m))
    cond_per_knot = np.zeros(K + 1)
    picard_residuals: list = [None] * K
    picard_iters = np.zeros(K, dtype=int)
    picard_ok = np.zeros(K, dtype=bool)
    z_energy = np.zeros(2)

    x_T = bundle.states[:, K]
    y_next = [np.asarray(spec.terminal_cost[i](x_T), dtype=float) for i in range(2)]
    prep_T = ops.prepare(x_T)
    term_resid = []
    for i in range(2):
        coeffs_y[i, K], cond = prep_T.fit(y_next[i], knot=K)
        cond_per_knot[K] = max(cond_per_knot[K], cond)
        term_resid.append(float(np.max(np.abs(prep_T.predict(coeffs_y[i, K]) - y_next[i]))))

    for k in range(K - 1, -1, -1):
        t = grid.knots[k]
        x_k = bundle.states[:, k]
        db = bundle.brownian_increments[:, k]
        prep = ops.prepare(x_k)
        z_pred = []
        for i in range(2):
            # conditional-mean-zero control variate: subtracting any
            # X_k-measurable quantity from Y_{k+1} leaves the increment
            # identity unbiased and removes the 1/dt variance blowup
            centered = y_next[i] - prep.predict(coeffs_y[i, k + 1])
            cz, cond = prep.fit_many(centered[:, None] * db / dt, knot=k)
            coeffs_z[i, k] = cz
            cond_per_knot[k] = max(cond_per_knot[k], cond)
            z_pred.append(np.stack(
                [prep.predict(cz[:, j]) for j in range(m)], axis=1))
        z_energy += dt * np.array([float(np.mean(np.sum(z ** 2, axis=1))) for z in z_pred])

        # the coupling between the players enters only through the gradient
        # fields, which are fixed at this point, so the generator is
        # evaluated once and the fixed-point pass converges immediately
        if mollify is None:
            u = np.asarray(spec.best_response[0](t, x_k, z_pred[0], z_pred[1]), dtype=float)
            v = np.asarray(spec.best_response[1](t, x_k, z_pred[0], z_pred[1]), dtype=float)
            gen = [hamiltonian_batch(spec, i + 1, t, x_k, z_pred[i], u, v) for i in range(2)]
        else:
            gen = [mollified_generator_batch(spec, i + 1, t, x_k, z_pred[0], z_pred[1], mollify)
                   for i in range(2)]
        targets = np.stack([y_next[i] + dt * gen[i] for i in range(2)], axis=1)

        prev = [coeffs_y[0, k + 1], coeffs_y[1, k + 1]]
        residuals = []
        new = prev
        for it in range(picard_max):
            cy, cond = prep.fit_many(targets, knot=k)
            cond_per_knot[k] = max(cond_per_knot[k], cond)
            new = [cy[:, 0], cy[:, 1]]
            resid = max(float(np.max(np.abs(new[i] - prev[i]))) for i in range(2))
            residuals.append(resid)
            prev = new
            if resid <= picard_tol:
                break
        picard_residuals[k] = residuals
        picard_iters[k] = len(residuals)
        picard_ok[k] = residuals[-1] <= picard_tol
        for i in range(2):
            coeffs_y[i, k] = new[i]
            y_next[i] = prep.predict(new[i])

    diagnostics = {
        "cond_numbers": cond_per_knot.tolist(),
        "picard_residuals": [list(map(float, r)) for r in picard_residuals],
        "picard_iterations": picard_iters.tolist(),
        "picard_converged": bool(np.all(picard_ok)),
        "picard_warning": bool(np.any(~picard_ok)),
        "z_energy": {"1": float(z_energy[0]), "2": float(z_energy[1])},
        "terminal_residual": {"1": term_resid[0], "2": term_resid[1]},
        "n_paths": n_paths,
        "seed": bundle.seed,
        "ridge": _RIDGE,
        "mollify_level": None if mollify is None else mollify.level,
        "extrapolation_seen": False,
    }
    return BsdeSolution(grid=grid, basis=basis, dim_m=m,
                        coeffs_y=coeffs_y, coeffs_z=coeffs_z,
                        diagnostics=diagnostics)


@dataclass
class GrowthReport:
    """Log-log growth fit of the value maps over state-space spheres."""

    radii: list
    max_abs: dict          # player -> list of max |value| per radius
    lambda_hat: dict       # player -> fitted exponent
    prefactor: dict        # player -> fitted constant
    eval_time: float


def growth_diagnostic(sol: BsdeSolution, radii, t: Optional[float] = None,
                      n_dirs: int = 32) -> GrowthReport:
    """Fit |value(t, x)| ~ C |x|^lambda over spheres of the given radii.

    Defaults to the mid-horizon knot: the start knot carries no spatial
    information when all paths share one start point.
    """
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii) or len(radii) < 2:
        raise ValueError("need at least two positive radii")
    if t is None:
        t = sol.grid.t0 + 0.5 * (sol.grid.T - sol.grid.t0)
    m = sol.dim_m
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((n_dirs, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if sol.basis.log_state:
        # positive-state charts: probe the positive orthant only
        dirs = np.abs(dirs)
        dirs = np.unique(dirs, axis=0)

    max_abs = {1: [], 2: []}
    for r in radii:
        pts = dirs * r
        for player in (1, 2):
            vals = sol.eval_w(player, t, pts)
            max_abs[player].append(float(np.max(np.abs(vals))))

    lam, pref = {}, {}
    logr = np.log(np.asarray(radii))
    for player in (1, 2):
        vals = np.asarray(max_abs[player])
        safe = np.maximum(vals, 1e-300)
        slope, intercept = np.polyfit(logr, np.log(safe), 1)
        lam[player] = float(slope)
        pref[player] = float(np.exp(intercept))
    return GrowthReport(radii=radii, max_abs=max_abs, lambda_hat=lam,
                        prefactor=pref, eval_time=float(t))


def growth_stability(report_a: GrowthReport, report_b: GrowthReport,
                     rel_tol: float = 0.20) -> dict:
    """Compare growth exponents of two solutions; flags non-stabilization.

    Intended for solutions of the same problem at two regularization
    levels: the exponent should not move by more than ``rel_tol``
    relatively as the level doubles.
    """
    out = {}
    for player in (1, 2):
        a = report_a.lambda_hat[player]
        b = report_b.lambda_hat[player]
        rel = abs(b - a) / max(abs(a), 1e-12)
        out[player] = {"lambda_a": a, "lambda_b": b, "rel_change": rel,
                       "stable": rel <= rel_tol}
    out["stable"] = all(out[p]["stable"] for p in (1, 2))
    return out
