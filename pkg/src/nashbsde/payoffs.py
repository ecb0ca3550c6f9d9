"""Payoff estimation and Nash certification by deviation testing.

Two independent estimators of each player's expected cost: reweighting
driftless reference paths by the change-of-measure density, and direct
simulation of the controlled dynamics.  The Nash check freezes one
player at the candidate equilibrium, sweeps a parametric family of
deviations for the other, and flags any deviation that lowers the
deviator's cost beyond tolerance.  All deviation rows share one
reference ensemble, so improvement estimates are paired differences
under common random numbers.

The certification is family-relative by construction: the true
equilibrium property quantifies over all admissible controls, which no
finite sweep can test.  Reports always state the family they covered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .games import Box, FeedbackControl, GameSpec, equilibrium_feedbacks
from .sde import (PathBundle, SimulationError, TimeGrid, controls_at,
                  simulate_controlled, simulate_reference)

__all__ = [
    "PayoffEstimate",
    "DeviationRow",
    "DeviationFamily",
    "NashReport",
    "W0PayoffReport",
    "estimate_payoff",
    "path_cost_functionals",
    "verify_w0_equals_j",
    "make_deviation_family",
    "standard_deviation_family",
    "deviation_test",
]


@dataclass(frozen=True)
class PayoffEstimate:
    """Monte Carlo estimate of one player's expected total cost."""

    player: int
    value: float
    std_error: float
    n_paths: int
    method: str  # "girsanov_weighted" or "direct_controlled"

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("payoff estimate must be finite")
        if not self.std_error > 0:
            raise ValueError("standard error must be positive")


def _z_cache(spec: GameSpec, bundle: PathBundle, z_source):
    """Per-knot gradient fields along a bundle; feedback-independent."""
    cache = []
    for k in range(bundle.grid.n_steps):
        t = bundle.grid.knots[k]
        x = bundle.states[:, k]
        if z_source is None:
            z1 = np.zeros((bundle.n_paths, spec.dim_m))
            z2 = z1
        elif hasattr(z_source, "eval_z_both"):
            z1, z2 = z_source.eval_z_both(t, x)
        else:
            z1 = np.atleast_2d(z_source.eval_z(1, t, x))
            z2 = np.atleast_2d(z_source.eval_z(2, t, x))
        cache.append((z1, z2))
    return cache


def _cost_sweep(spec: GameSpec, bundle: PathBundle, feedbacks, z_source,
                with_weights: bool, z_cache=None):
    """One pass over a bundle: running costs and, optionally, the weights."""
    grid = bundle.grid
    dt = grid.dt
    cost1 = np.zeros(bundle.n_paths)
    cost2 = np.zeros(bundle.n_paths)
    log_w = np.zeros(bundle.n_paths) if with_weights else None
    for k in range(grid.n_steps):
        t = grid.knots[k]
        x = bundle.states[:, k]
        if z_cache is not None:
            z1, z2 = z_cache[k]
            u = np.atleast_2d(np.asarray(feedbacks[0](t, x, z1, z2), dtype=float))
            v = np.atleast_2d(np.asarray(feedbacks[1](t, x, z1, z2), dtype=float))
        else:
            u, v = controls_at(spec, feedbacks, z_source, t, x)
        cost1 += dt * np.asarray(spec.running_cost[0](t, x, u, v), dtype=float)
        cost2 += dt * np.asarray(spec.running_cost[1](t, x, u, v), dtype=float)
        if with_weights:
            f = np.asarray(spec.drift_f(t, x, u, v), dtype=float)
            sig_inv = np.asarray(spec.sigma_inv(t, x), dtype=float)
            eta = np.einsum("nij,nj->ni", sig_inv, f)
            log_w += np.einsum("ni,ni->n", eta, bundle.brownian_increments[:, k])
            log_w -= 0.5 * dt * np.einsum("ni,ni->n", eta, eta)
    x_T = bundle.states[:, grid.n_steps]
    cost1 += np.asarray(spec.terminal_cost[0](x_T), dtype=float)
    cost2 += np.asarray(spec.terminal_cost[1](x_T), dtype=float)
    for name, c in (("player 1", cost1), ("player 2", cost2)):
        if not np.all(np.isfinite(c)):
            bad = int(np.argwhere(~np.isfinite(c))[0][0])
            raise SimulationError(f"non-finite {name} cost accumulation on path {bad}")
    w = None
    if with_weights:
        w = np.exp(log_w)
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            bad = int(np.argwhere(~(np.isfinite(w) & (w > 0.0)))[0][0])
            raise SimulationError(f"invalid Girsanov weight on path {bad}")
    return cost1, cost2, w


def path_cost_functionals(spec: GameSpec, bundle: PathBundle, feedbacks,
                          z_source=None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-path accumulated cost of each player along a bundle.

    Left-point rule for the running integral plus the terminal cost; the
    controls are the feedbacks evaluated along the bundle's own states.
    """
    cost1, cost2, _ = _cost_sweep(spec, bundle, feedbacks, z_source, False)
    return cost1, cost2


def _mean_se(samples: np.ndarray) -> Tuple[float, float]:
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(samples.size))
    return mean, max(se, 1e-300)


def estimate_payoff(spec: GameSpec, feedbacks, z_source, grid: TimeGrid, x0,
                    n_paths: int, seed: int, method: str,
                    bundle: Optional[PathBundle] = None):
    """Estimate both players' expected costs under a feedback pair.

    ``girsanov_weighted`` reuses (or simulates) a driftless reference
    bundle and reweights; ``direct_controlled`` simulates the controlled
    dynamics and averages plainly.  Returns one estimate per player.
    """
    if method == "girsanov_weighted":
        if bundle is None:
            bundle = simulate_reference(spec, grid, x0, n_paths, seed)
        if bundle.scheme_tag != "reference":
            raise ValueError("weights are defined on reference-measure bundles only")
        c1, c2, w = _cost_sweep(spec, bundle, feedbacks, z_source, True)
        samples = (w * c1, w * c2)
    elif method == "direct_controlled":
        bundle = simulate_controlled(spec, grid, x0, feedbacks, z_source, n_paths, seed)
        samples = path_cost_functionals(spec, bundle, feedbacks, z_source)
    else:
        raise ValueError("method must be 'girsanov_weighted' or 'direct_controlled'")
    out = []
    for player, s in ((1, samples[0]), (2, samples[1])):
        value, se = _mean_se(s)
        out.append(PayoffEstimate(player=player, value=value, std_error=se,
                                  n_paths=bundle.n_paths, method=method))
    return tuple(out)


@dataclass
class W0PayoffReport:
    """Start-value of the backward solution against the payoff estimator."""

    rows: list  # per player: dict(w0, payoff, std_error, gap, allowance)
    rel_allowance: float
    passed: bool


def verify_w0_equals_j(spec: GameSpec, sol, feedbacks, grid: TimeGrid, x0,
                       n_paths: int, seed: int,
                       rel_allowance: float = 0.02) -> W0PayoffReport:
    """Check that the solved value at the start point equals the payoff.

    Passes when |w0 - payoff| <= 3 SE + rel_allowance * |payoff| for both
    players (the allowance absorbs time-discretization bias).
    """
    est = estimate_payoff(spec, feedbacks, sol, grid, x0, n_paths, seed,
                          "girsanov_weighted")
    rows = []
    ok = True
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    for e in est:
        w0 = float(sol.eval_w(e.player, grid.t0, x0))
        gap = abs(w0 - e.value)
        allowance = 3.0 * e.std_error + rel_allowance * abs(e.value)
        ok = ok and gap <= allowance
        rows.append({"player": e.player, "w0": w0, "payoff": e.value,
                     "std_error": e.std_error, "gap": gap, "allowance": allowance,
                     "passed": gap <= allowance})
    return W0PayoffReport(rows=rows, rel_allowance=rel_allowance, passed=ok)


# ---------------------------------------------------------------------------
# Deviation families
# ---------------------------------------------------------------------------


@dataclass
class DeviationFamily:
    """Per-player lists of labelled deviation feedbacks."""

    entries: List[Tuple[int, str, FeedbackControl]] = field(default_factory=list)

    def extend(self, other: "DeviationFamily") -> "DeviationFamily":
        return DeviationFamily(entries=self.entries + other.entries)

    def for_player(self, player: int):
        return [(d, fb) for p, d, fb in self.entries if p == player]

    def __len__(self):
        return len(self.entries)


def _constant_feedback(player: int, value: np.ndarray, description: str) -> FeedbackControl:
    value = np.atleast_1d(np.asarray(value, dtype=float))

    def fn(t, x, z1, z2):
        return np.tile(value, (np.atleast_2d(x).shape[0], 1))

    return FeedbackControl(player, description, fn)


def _bang_bang_feedback(player: int, box: Box, switch_times: np.ndarray,
                        description: str) -> FeedbackControl:
    lo, hi = box.lo.copy(), box.hi.copy()
    times = np.asarray(switch_times, dtype=float)

    def fn(t, x, z1, z2):
        phase = int(np.searchsorted(times, t, side="right"))
        corner = lo if phase % 2 == 0 else hi
        return np.tile(corner, (np.atleast_2d(x).shape[0], 1))

    return FeedbackControl(player, description, fn)


def _perturbed_feedback(player: int, base: FeedbackControl, box: Box,
                        offset: np.ndarray, description: str) -> FeedbackControl:
    offset = np.asarray(offset, dtype=float)

    def fn(t, x, z1, z2):
        return box.clip(np.atleast_2d(base(t, x, z1, z2)) + offset)

    return FeedbackControl(player, description, fn)


def make_deviation_family(spec: GameSpec, kind: str, count: int,
                          seed: int = 0, horizon_T: Optional[float] = None) -> DeviationFamily:
    """Build one kind of deviation for both players.

    constants: uniform per-axis grid over each player's box (count points
    per axis).  bang_bang: the k-th member (k = 1..count) alternates
    between the box corners at k equally spaced interior switch times.
    perturbed_feedback: the player's own equilibrium map shifted by a
    fixed random offset of amplitude 10% of the box width, clipped back
    into the box.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    T = spec.horizon_T if horizon_T is None else horizon_T
    entries: List[Tuple[int, str, FeedbackControl]] = []
    if kind == "constants":
        for player in (1, 2):
            box = spec.control_box(player)
            for value in box.grid(count):
                label = "const " + ",".join(f"{v:g}" for v in value)
                entries.append((player, label, _constant_feedback(player, value, label)))
    elif kind == "bang_bang":
        for player in (1, 2):
            box = spec.control_box(player)
            for k in range(1, count + 1):
                times = T * np.arange(1, k + 1) / (k + 1)
                label = f"bang-bang {k} switch" + ("es" if k > 1 else "")
                entries.append((player, label,
                                _bang_bang_feedback(player, box, times, label)))
    elif kind == "perturbed_feedback":
        eq = equilibrium_feedbacks(spec)
        rng = np.random.default_rng(seed)
        for player in (1, 2):
            box = spec.control_box(player)
            amp = 0.1 * box.width
            for j in range(count):
                offset = rng.uniform(-amp, amp)
                label = ("perturbed #" + str(j + 1) + " offset "
                         + ",".join(f"{o:+.4f}" for o in np.atleast_1d(offset)))
                entries.append((player, label,
                                _perturbed_feedback(player, eq[player - 1], box,
                                                    offset, label)))
    else:
        raise ValueError(
            "kind must be 'constants', 'bang_bang' or 'perturbed_feedback'")
    return DeviationFamily(entries=entries)


def standard_deviation_family(spec: GameSpec, seed: int = 0, constants: int = 9,
                              bang_bang: int = 4, perturbed: int = 5) -> DeviationFamily:
    """The default sweep: constants + bang-bang + perturbed equilibria."""
    fam = make_deviation_family(spec, "constants", constants, seed)
    if bang_bang > 0:
        fam = fam.extend(make_deviation_family(spec, "bang_bang", bang_bang, seed))
    if perturbed > 0:
        fam = fam.extend(make_deviation_family(spec, "perturbed_feedback", perturbed, seed))
    return fam


# ---------------------------------------------------------------------------
# Nash certification
# ---------------------------------------------------------------------------


@dataclass
class DeviationRow:
    player: int
    description: str
    payoff: float
    std_error: float
    improvement: float       # equilibrium cost minus deviation cost, > 0 favours deviator
    improvement_se: float
    tolerance: float
    verdict: str             # "ok" or "improves"


@dataclass
class NashReport:
    """Deviation sweep outcome around a candidate equilibrium."""

    eq_estimates: list            # PayoffEstimate, both players x both methods
    weight_mean: float
    weight_mean_se: float
    weight_check_passed: bool
    rows: List[DeviationRow]
    rel_tol: float
    family_size: int
    passed: bool = field(init=False)

    def __post_init__(self):
        # pass is exactly "no deviation improves beyond tolerance"; the
        # weight sanity check is reported but does not define the verdict
        self.passed = all(r.verdict == "ok" for r in self.rows)

    def eq_value(self, player: int, method: str = "girsanov_weighted") -> PayoffEstimate:
        for e in self.eq_estimates:
            if e.player == player and e.method == method:
                return e
        raise KeyError((player, method))


def deviation_test(spec: GameSpec, sol, eq_feedbacks, family: DeviationFamily,
                   grid: TimeGrid, x0, n_paths: int, seed: int,
                   rel_tol: float = 0.01,
                   bundle: Optional[PathBundle] = None) -> NashReport:
    """Sweep unilateral deviations and flag any that beat the equilibrium.

    Every row reuses one reference bundle, so the improvement estimate of
    a row is the mean of per-path paired differences; a row fails when
    the improvement exceeds max(3 paired SE, rel_tol * |equilibrium cost|).
    """
    if len(family) == 0:
        raise ValueError("deviation family is empty")
    if bundle is None:
        bundle = simulate_reference(spec, grid, x0, n_paths, seed)
    if bundle.scheme_tag != "reference":
        raise ValueError("the deviation sweep requires a reference-measure bundle")

    zc = _z_cache(spec, bundle, sol)
    c1_eq, c2_eq, w_eq = _cost_sweep(spec, bundle, eq_feedbacks, sol, True, z_cache=zc)
    eq_samples = {1: w_eq * c1_eq, 2: w_eq * c2_eq}
    w_mean, w_se = _mean_se(w_eq)
    weight_ok = abs(w_mean - 1.0) <= 4.0 * w_se

    eq_estimates = []
    for player in (1, 2):
        value, se = _mean_se(eq_samples[player])
        eq_estimates.append(PayoffEstimate(player, value, se, bundle.n_paths,
                                           "girsanov_weighted"))
    direct = estimate_payoff(spec, eq_feedbacks, sol, grid, x0, bundle.n_paths,
                             seed, "direct_controlled")
    eq_estimates.extend(direct)

    rows = []
    for player, description, fb in family.entries:
        pair = (fb, eq_feedbacks[1]) if player == 1 else (eq_feedbacks[0], fb)
        costs = _cost_sweep(spec, bundle, pair, sol, True, z_cache=zc)
        dev_samples = costs[2] * costs[player - 1]
        dev_value, dev_se = _mean_se(dev_samples)
        diff = eq_samples[player] - dev_samples
        improvement, improvement_se = _mean_se(diff)
        eq_value = next(e.value for e in eq_estimates
                        if e.player == player and e.method == "girsanov_weighted")
        tol = max(3.0 * improvement_se, rel_tol * abs(eq_value))
        verdict = "improves" if improvement > tol else "ok"
        rows.append(DeviationRow(player=player, description=description,
                                 payoff=dev_value, std_error=dev_se,
                                 improvement=improvement,
                                 improvement_se=improvement_se,
                                 tolerance=tol, verdict=verdict))

    return NashReport(eq_estimates=eq_estimates, weight_mean=w_mean,
                      weight_mean_se=w_se, weight_check_passed=weight_ok,
                      rows=rows, rel_tol=rel_tol, family_size=len(family))
