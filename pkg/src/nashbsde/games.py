"""Two-player game definitions: dynamics, costs, Hamiltonians, best responses.

A game couples a driftless diffusion (the sampling dynamics) with a
controlled drift, running and terminal costs for each player, compact
box-shaped control sets, and optional pointwise best-response maps.  All
callables attached to a :class:`GameSpec` are batched over a path axis:
states have shape ``(n, m)``, controls ``(n, d_i)``, and scalar outputs
shape ``(n,)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Box",
    "FeedbackControl",
    "GameSpec",
    "LqGameParams",
    "GbmGameParams",
    "IsaacsReport",
    "GameValidationReport",
    "clamp_pm1",
    "clamp_01",
    "eval_hamiltonian",
    "hamiltonian_batch",
    "lq_feedback",
    "lq_game",
    "gbm_extension_game",
    "builtin_game",
    "equilibrium_feedbacks",
    "best_response_grid",
    "check_isaacs",
    "validate_game",
]


def clamp_pm1(eta):
    """Clamp to [-1, 1]: identity on the interval, saturating outside."""
    return np.clip(eta, -1.0, 1.0)


def clamp_01(eta):
    """Clamp to [0, 1]: min(1, max(0, eta))."""
    return np.clip(eta, 0.0, 1.0)


@dataclass(frozen=True)
class Box:
    """Axis-aligned compact box, lo/hi per control coordinate."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box lo/hi must be 1-d arrays of equal length")
        if np.any(hi < lo):
            raise ValueError("box upper bounds must dominate lower bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def clip(self, u):
        return np.clip(u, self.lo, self.hi)

    def grid(self, n: int) -> np.ndarray:
        """Uniform n-per-axis grid, rows in lexicographic order."""
        axes = [np.linspace(self.lo[c], self.hi[c], n) for c in range(self.dim)]
        pts = np.array(list(itertools.product(*axes)), dtype=float)
        return pts


@dataclass(frozen=True)
class FeedbackControl:
    """Measurable control map (t, x, z1, z2) -> control batch of shape (n, d).

    ``z1``/``z2`` are the per-player gradient-process values at (t, x);
    maps that ignore them simply receive zero arrays.
    """

    player: int
    description: str
    fn: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, t, x, z1, z2):
        return np.asarray(self.fn(t, x, z1, z2), dtype=float)


@dataclass
class GameSpec:
    """Full description of a two-player stochastic differential game.

    Callable shape contract (n = batch size over paths, m = state dim):

    - ``sigma(t, x)`` and ``sigma_inv(t, x)``: x (n, m) -> (n, m, m)
    - ``drift_f(t, x, u, v)``: -> (n, m)
    - ``running_cost[i](t, x, u, v)``: -> (n,)
    - ``terminal_cost[i](x)``: -> (n,)
    - ``best_response[i](t, x, z1, z2)``: z's (n, m) -> (n, d_i)
    """

    dim_m: int
    horizon_T: float
    sigma: Callable
    sigma_inv: Callable
    drift_f: Callable
    running_cost: Sequence[Callable]
    terminal_cost: Sequence[Callable]
    control_box_1: Box
    control_box_2: Box
    best_response: Optional[Sequence[Callable]] = None
    growth_gamma: float = 2.0
    drift_growth_const: Optional[float] = None
    cost_growth_const: Optional[float] = None
    # box the diagnostics sample states from (positive diffusions need it)
    state_sample_box: Optional[Box] = None
    default_x0: Optional[np.ndarray] = None
    name: str = "custom"

    def __post_init__(self):
        if self.dim_m < 1:
            raise ValueError("dim_m must be a positive integer")
        if self.horizon_T <= 0:
            raise ValueError("horizon_T must be positive")
        if self.growth_gamma < 1.0:
            raise ValueError("growth_gamma must be >= 1")
        if len(self.running_cost) != 2 or len(self.terminal_cost) != 2:
            raise ValueError("running_cost and terminal_cost must hold one entry per player")
        if self.state_sample_box is None:
            lim = np.full(self.dim_m, 5.0)
            self.state_sample_box = Box(-lim, lim)
        if self.default_x0 is None:
            self.default_x0 = np.zeros(self.dim_m)
        else:
            self.default_x0 = np.atleast_1d(np.asarray(self.default_x0, dtype=float))

    def control_box(self, player: int) -> Box:
        if player == 1:
            return self.control_box_1
        if player == 2:
            return self.control_box_2
        raise ValueError("player index must be 1 or 2")


def hamiltonian_batch(spec: GameSpec, player: int, t: float, x, p, u, v):
    """Vectorized H_i = p . sigma_inv(t,x) f(t,x,u,v) + h_i(t,x,u,v).

    No box validation here; this is the hot path used by the solver.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    sig_inv = spec.sigma_inv(t, x)
    f = spec.drift_f(t, x, u, v)
    drift_term = np.einsum("ni,nij,nj->n", p, sig_inv, f)
    h = spec.running_cost[player - 1](t, x, u, v)
    return drift_term + np.asarray(h, dtype=float)


def eval_hamiltonian(spec: GameSpec, player: int, t: float, x, p, u, v) -> float:
    """Hamiltonian of one player at a single point, with control validation."""
    if player not in (1, 2):
        raise ValueError("player index must be 1 or 2")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not spec.control_box_1.contains(u):
        raise ValueError("first control outside its admissible box")
    if not spec.control_box_2.contains(v):
        raise ValueError("second control outside its admissible box")
    out = hamiltonian_batch(
        spec, player, t,
        np.asarray(x, dtype=float).reshape(1, -1),
        np.asarray(p, dtype=float).reshape(1, -1),
        u.reshape(1, -1), v.reshape(1, -1),
    )
    return float(out[0])


# ---------------------------------------------------------------------------
# Built-in games
# ---------------------------------------------------------------------------

_TERMINAL_KINDS = ("quadratic", "linear", "constant", "abs")


def _terminal_fn(kind: str, coef: float) -> Callable:
    if kind == "quadratic":
        return lambda x: coef * np.sum(np.atleast_2d(x) ** 2, axis=1)
    if kind == "linear":
        return lambda x: coef * np.sum(np.atleast_2d(x), axis=1)
    if kind == "constant":
        return lambda x: np.full(np.atleast_2d(x).shape[0], coef)
    if kind == "abs":
        return lambda x: coef * np.sum(np.abs(np.atleast_2d(x)), axis=1)
    raise ValueError(f"unknown terminal cost kind {kind!r}; pick one of {_TERMINAL_KINDS}")


@dataclass
class LqGameParams:
    """Coefficients of the linear-quadratic example.

    Drift f = a x + b u + c v; running cost of player i is
    theta_i x^p_i + gamma_i u^2 + rho_i v^2, with u in [-1, 1] and
    v in [0, 1].  p_i must be nonnegative integers so the running cost
    stays real on negative states.
    """

    a: float = 0.0
    b: float = 1.0
    c: float = 1.0
    theta1: float = 0.0
    theta2: float = 0.0
    p1: int = 2
    p2: int = 2
    gamma1: float = 1.0
    gamma2: float = 0.1
    rho1: float = 0.1
    rho2: float = 1.0
    terminal_kind: str = "quadratic"
    terminal_coef1: float = 1.0
    terminal_coef2: float = 1.0
    horizon_T: float = 1.0

    def __post_init__(self):
        if self.gamma1 <= 0.0:
            raise ValueError("gamma1 must be strictly positive (player 1 control cost)")
        if self.rho2 <= 0.0:
            raise ValueError("rho2 must be strictly positive (player 2 control cost)")
        for name, p in (("p1", self.p1), ("p2", self.p2)):
            if int(p) != p or p < 0:
                raise ValueError(f"{name} must be a nonnegative integer")
        self.p1 = int(self.p1)
        self.p2 = int(self.p2)


def lq_feedback(params: LqGameParams):
    """Pointwise-minimizing feedback pair of the linear-quadratic game.

    Player 1 plays the clamp of -b z1 / (2 gamma1) to [-1, 1]; player 2
    the clamp of -c z2 / (2 rho2) to [0, 1].
    """
    b, c = params.b, params.c
    g1, r2 = params.gamma1, params.rho2

    def u_star(t, x, z1, z2):
        return clamp_pm1(-b * np.atleast_2d(z1)[:, :1] / (2.0 * g1))

    def v_star(t, x, z1, z2):
        return clamp_01(-c * np.atleast_2d(z2)[:, :1] / (2.0 * r2))

    fb1 = FeedbackControl(1, "equilibrium u*", u_star)
    fb2 = FeedbackControl(2, "equilibrium v*", v_star)
    return fb1, fb2


def _lq_running(theta, p, gu, gv):
    def h(t, x, u, v):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        v = np.atleast_2d(v)
        out = gu * u[:, 0] ** 2 + gv * v[:, 0] ** 2
        if theta != 0.0:
            out = out + theta * x[:, 0] ** p
        else:
            out = out + np.zeros(x.shape[0])
        return out

    return h


def lq_game(params: Optional[LqGameParams] = None, **overrides) -> GameSpec:
    """Linear-quadratic game on the line with unit sampling diffusion."""
    params = params or LqGameParams()
    if overrides:
        params = LqGameParams(**{**params.__dict__, **overrides})
    a, b, c = params.a, params.b, params.c

    def sigma(t, x):
        x = np.atleast_2d(x)
        return np.ones((x.shape[0], 1, 1))

    def drift(t, x, u, v):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        v = np.atleast_2d(v)
        return a * x + b * u[:, :1] + c * v[:, :1]

    fb1, fb2 = lq_feedback(params)
    gamma = float(max(params.p1, params.p2, 2))
    spec = GameSpec(
        dim_m=1,
        horizon_T=params.horizon_T,
        sigma=sigma,
        sigma_inv=sigma,
        drift_f=drift,
        running_cost=(
            _lq_running(params.theta1, params.p1, params.gamma1, params.rho1),
            _lq_running(params.theta2, params.p2, params.gamma2, params.rho2),
        ),
        terminal_cost=(
            _terminal_fn(params.terminal_kind, params.terminal_coef1),
            _terminal_fn(params.terminal_kind, params.terminal_coef2),
        ),
        control_box_1=Box(np.array([-1.0]), np.array([1.0])),
        control_box_2=Box(np.array([0.0]), np.array([1.0])),
        best_response=(fb1.fn, fb2.fn),
        growth_gamma=gamma,
        drift_growth_const=abs(a) + abs(b) + abs(c),
        default_x0=np.array([0.0]),
        name="lq",
    )
    spec.params = params
    return spec


@dataclass
class GbmGameParams:
    """Coefficients of the state-scaled (geometric) variant.

    Sampling diffusion dX = X dB on positive states; controlled drift
    f = x (u + v).  Running costs share the quadratic-in-control form of
    the linear case.
    """

    theta1: float = 0.0
    theta2: float = 0.0
    p1: int = 2
    p2: int = 2
    gamma1: float = 1.0
    gamma2: float = 0.1
    rho1: float = 0.1
    rho2: float = 1.0
    terminal_kind: str = "quadratic"
    terminal_coef1: float = 1.0
    terminal_coef2: float = 1.0
    horizon_T: float = 1.0

    def __post_init__(self):
        if self.gamma1 <= 0.0:
            raise ValueError("gamma1 must be strictly positive")
        if self.rho2 <= 0.0:
            raise ValueError("rho2 must be strictly positive")


def gbm_extension_game(params: Optional[GbmGameParams] = None, **overrides) -> GameSpec:
    """Game whose sampling diffusion is geometric Brownian motion."""
    params = params or GbmGameParams()
    if overrides:
        params = GbmGameParams(**{**params.__dict__, **overrides})

    def sigma(t, x):
        x = np.atleast_2d(x)
        return x[:, :, None] * np.ones((1, 1, 1))

    def sigma_inv(t, x):
        x = np.atleast_2d(x)
        return (1.0 / x)[:, :, None]

    def drift(t, x, u, v):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        v = np.atleast_2d(v)
        return x * (u[:, :1] + v[:, :1])

    g1, r2 = params.gamma1, params.rho2

    def u_star(t, x, z1, z2):
        return clamp_pm1(-np.atleast_2d(z1)[:, :1] / (2.0 * g1))

    def v_star(t, x, z1, z2):
        return clamp_01(-np.atleast_2d(z2)[:, :1] / (2.0 * r2))

    spec = GameSpec(
        dim_m=1,
        horizon_T=params.horizon_T,
        sigma=sigma,
        sigma_inv=sigma_inv,
        drift_f=drift,
        running_cost=(
            _lq_running(params.theta1, params.p1, params.gamma1, params.rho1),
            _lq_running(params.theta2, params.p2, params.gamma2, params.rho2),
        ),
        terminal_cost=(
            _terminal_fn(params.terminal_kind, params.terminal_coef1),
            _terminal_fn(params.terminal_kind, params.terminal_coef2),
        ),
        control_box_1=Box(np.array([-1.0]), np.array([1.0])),
        control_box_2=Box(np.array([0.0]), np.array([1.0])),
        best_response=(u_star, v_star),
        growth_gamma=float(max(params.p1, params.p2, 2)),
        drift_growth_const=2.0,
        state_sample_box=Box(np.array([0.2]), np.array([5.0])),
        default_x0=np.array([1.0]),
        name="gbm_extension",
    )
    spec.params = params
    return spec


BUILTIN_GAMES = {"lq": lq_game, "gbm_extension": gbm_extension_game}


def builtin_game(name: str, **overrides) -> GameSpec:
    """Look up a built-in game by name and apply parameter overrides."""
    try:
        builder = BUILTIN_GAMES[name]
    except KeyError:
        raise ValueError(
            f"unknown builtin game {name!r}; available: {sorted(BUILTIN_GAMES)}"
        ) from None
    return builder(**overrides)


def equilibrium_feedbacks(spec: GameSpec):
    """Wrap the game's best-response maps as a feedback pair."""
    if spec.best_response is None:
        raise ValueError("game has no best-response maps configured")
    fb1 = FeedbackControl(1, "equilibrium", spec.best_response[0])
    fb2 = FeedbackControl(2, "equilibrium", spec.best_response[1])
    return fb1, fb2


# ---------------------------------------------------------------------------
# Brute-force best response and the pointwise-minimum check
# ---------------------------------------------------------------------------


def best_response_grid(spec: GameSpec, player: int, t, x, z_i, opponent_value,
                       grid_n: int) -> np.ndarray:
    """Grid argmin of the player's Hamiltonian in its own control.

    Scans a uniform grid of ``grid_n`` points per coordinate of the
    player's box with the opponent frozen; ties resolve to the
    lexicographically smallest grid point.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    box = spec.control_box(player)
    opp_box = spec.control_box(2 if player == 1 else 1)
    opponent_value = np.atleast_1d(np.asarray(opponent_value, dtype=float))
    if not opp_box.contains(opponent_value):
        raise ValueError("opponent control outside its admissible box")
    pts = box.grid(grid_n)
    n = pts.shape[0]
    x_b = np.tile(np.asarray(x, dtype=float).reshape(1, -1), (n, 1))
    z_b = np.tile(np.asarray(z_i, dtype=float).reshape(1, -1), (n, 1))
    opp_b = np.tile(opponent_value.reshape(1, -1), (n, 1))
    if player == 1:
        vals = hamiltonian_batch(spec, 1, t, x_b, z_b, pts, opp_b)
    else:
        vals = hamiltonian_batch(spec, 2, t, x_b, z_b, opp_b, pts)
    return pts[int(np.argmin(vals))]


@dataclass
class IsaacsReport:
    """Outcome of sampling the pointwise-minimum property of the best responses."""

    max_violation: float
    max_violation_p1: float
    max_violation_p2: float
    threshold: float
    grid_n: int
    sample_count: int
    passed: bool
    samples: list = field(default_factory=list)  # (t, x, z1, z2, viol1, viol2)


def check_isaacs(spec: GameSpec, sample_count: int, grid_n: int, seed: int,
                 z_range: float = 5.0, base_tol: float = 1e-9,
                 keep_samples: bool = True) -> IsaacsReport:
    """Verify that the configured best responses minimize each Hamiltonian.

    Draws random (t, x, z1, z2) points, evaluates each player's
    Hamiltonian at the best-response pair and at every grid control with
    the opponent frozen at its best response, and reports the largest
    positive gap.  The pass threshold adds quadratic grid-resolution
    slack to ``base_tol``.
    """
    if spec.best_response is None:
        raise ValueError("check requires best-response maps on the game")
    rng = np.random.default_rng(seed)
    sbox = spec.state_sample_box
    step_sq = sum(
        float((spec.control_box(i).width.max() / (grid_n - 1)) ** 2) for i in (1, 2)
    )
    threshold = base_tol + step_sq

    grids = {1: spec.control_box_1.grid(grid_n), 2: spec.control_box_2.grid(grid_n)}
    worst = [0.0, 0.0]
    rows = []
    for _ in range(sample_count):
        t = float(rng.uniform(0.0, spec.horizon_T))
        x = rng.uniform(sbox.lo, sbox.hi)
        z1 = rng.uniform(-z_range, z_range, size=spec.dim_m)
        z2 = rng.uniform(-z_range, z_range, size=spec.dim_m)
        x_b = x.reshape(1, -1)
        u_s = np.asarray(spec.best_response[0](t, x_b, z1.reshape(1, -1), z2.reshape(1, -1)), dtype=float)
        v_s = np.asarray(spec.best_response[1](t, x_b, z1.reshape(1, -1), z2.reshape(1, -1)), dtype=float)
        viol = []
        for player, z_own in ((1, z1), (2, z2)):
            pts = grids[player]
            n = pts.shape[0]
            xb = np.tile(x_b, (n, 1))
            zb = np.tile(z_own.reshape(1, -1), (n, 1))
            if player == 1:
                h_grid = hamiltonian_batch(spec, 1, t, xb, zb, pts, np.tile(v_s, (n, 1)))
                h_star = hamiltonian_batch(spec, 1, t, x_b, z_own.reshape(1, -1), u_s, v_s)
            else:
                h_grid = hamiltonian_batch(spec, 2, t, xb, zb, np.tile(u_s, (n, 1)), pts)
                h_star = hamiltonian_batch(spec, 2, t, x_b, z_own.reshape(1, -1), u_s, v_s)
            gap = float(h_star[0] - np.min(h_grid))
            viol.append(gap)
            worst[player - 1] = max(worst[player - 1], gap)
        if keep_samples:
            rows.append((t, x.copy(), z1.copy(), z2.copy(), viol[0], viol[1]))

    max_v = max(worst)
    return IsaacsReport(
        max_violation=max_v,
        max_violation_p1=worst[0],
        max_violation_p2=worst[1],
        threshold=threshold,
        grid_n=grid_n,
        sample_count=sample_count,
        passed=max_v <= threshold,
        samples=rows,
    )


# ---------------------------------------------------------------------------
# Spot checks of the declared structural assumptions
# ---------------------------------------------------------------------------


@dataclass
class GameValidationReport:
    sigma_identity_error: float
    drift_growth_ratio: float
    cost_growth_ratio: float
    ellipticity_min: float
    ellipticity_max: float
    best_response_in_box: bool
    passed: bool


def validate_game(spec: GameSpec, sample_count: int = 200, seed: int = 0,
                  identity_tol: float = 1e-10) -> GameValidationReport:
    """Sample-based check of the structural invariants a game declares.

    Verifies sigma * sigma_inv = identity, linear drift growth against
    the declared constant (fitted when none is declared), polynomial cost
    growth, containment of the best responses, and reports the sampled
    eigenvalue range of sigma sigma^T.
    """
    rng = np.random.default_rng(seed)
    sbox = spec.state_sample_box
    m = spec.dim_m
    ts = rng.uniform(0.0, spec.horizon_T, size=sample_count)
    xs = rng.uniform(sbox.lo, sbox.hi, size=(sample_count, m))
    us = rng.uniform(spec.control_box_1.lo, spec.control_box_1.hi,
                     size=(sample_count, spec.control_box_1.dim))
    vs = rng.uniform(spec.control_box_2.lo, spec.control_box_2.hi,
                     size=(sample_count, spec.control_box_2.dim))

    id_err = 0.0
    eig_lo, eig_hi = np.inf, -np.inf
    drift_ratio = 0.0
    cost_ratio = 0.0
    br_ok = True
    eye = np.eye(m)
    for k in range(sample_count):
        t = float(ts[k])
        xb = xs[k].reshape(1, -1)
        sig = np.asarray(spec.sigma(t, xb), dtype=float)[0]
        sig_i = np.asarray(spec.sigma_inv(t, xb), dtype=float)[0]
        id_err = max(id_err, float(np.max(np.abs(sig @ sig_i - eye))))
        eigs = np.linalg.eigvalsh(sig @ sig.T)
        eig_lo = min(eig_lo, float(eigs.min()))
        eig_hi = max(eig_hi, float(eigs.max()))

        f = np.asarray(spec.drift_f(t, xb, us[k].reshape(1, -1), vs[k].reshape(1, -1)), dtype=float)[0]
        drift_ratio = max(drift_ratio, float(np.linalg.norm(f) / (1.0 + np.linalg.norm(xs[k]))))

        denom = 1.0 + float(np.linalg.norm(xs[k])) ** spec.growth_gamma
        for i in (1, 2):
            h = float(spec.running_cost[i - 1](t, xb, us[k].reshape(1, -1), vs[k].reshape(1, -1))[0])
            g = float(spec.terminal_cost[i - 1](xb)[0])
            cost_ratio = max(cost_ratio, abs(h) / denom, abs(g) / denom)

        if spec.best_response is not None:
            z1 = rng.uniform(-5.0, 5.0, size=(1, m))
            z2 = rng.uniform(-5.0, 5.0, size=(1, m))
            u_s = np.asarray(spec.best_response[0](t, xb, z1, z2), dtype=float)
            v_s = np.asarray(spec.best_response[1](t, xb, z1, z2), dtype=float)
            br_ok = br_ok and spec.control_box_1.contains(u_s) and spec.control_box_2.contains(v_s)

    drift_ok = (spec.drift_growth_const is None
                or drift_ratio <= spec.drift_growth_const + 1e-9)
    cost_ok = (spec.cost_growth_const is None
               or cost_ratio <= spec.cost_growth_const + 1e-9)
    passed = (id_err <= identity_tol) and drift_ok and cost_ok and br_ok
    return GameValidationReport(
        sigma_identity_error=id_err,
        drift_growth_ratio=drift_ratio,
        cost_growth_ratio=cost_ratio,
        ellipticity_min=eig_lo,
        ellipticity_max=eig_hi,
        best_response_in_box=br_ok,
        passed=passed,
    )
