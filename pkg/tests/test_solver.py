"""Backward solver oracles: closed forms, terminal consistency, growth fits."""

import numpy as np
import pytest

import nashbsde as nb
from nashbsde.games import Box
from nashbsde.reporting import json_dumps
import json


def oracle_spec(drift_const=0.0, g=None):
    """Unit diffusion, drift identically ``drift_const``, zero running cost.

    With drift 0 the generator vanishes; with drift 1 it equals the own
    gradient component.
    """
    n_of = lambda x: np.atleast_2d(x).shape[0]
    return nb.GameSpec(
        dim_m=1, horizon_T=1.0,
        sigma=lambda t, x: np.ones((n_of(x), 1, 1)),
        sigma_inv=lambda t, x: np.ones((n_of(x), 1, 1)),
        drift_f=lambda t, x, u, v: np.full((n_of(x), 1), drift_const),
        running_cost=(lambda t, x, u, v: np.zeros(n_of(x)),) * 2,
        terminal_cost=(g or (lambda x: np.atleast_2d(x)[:, 0]),) * 2,
        control_box_1=Box([-1.0], [1.0]), control_box_2=Box([0.0], [1.0]),
        best_response=(lambda t, x, z1, z2: np.zeros((n_of(x), 1)),) * 2,
    )


DEG2 = nb.RegressionBasis("global_poly", 2)


class TestClosedForms:
    def test_zero_generator_identity_terminal(self):
        # value process is the martingale X itself: start value = x0
        x0 = 1.5
        spec = oracle_spec()
        grid = nb.TimeGrid(0.0, 1.0, 50)
        bundle = nb.simulate_reference(spec, grid, [x0], 20_000, 101)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        xt = bundle.states[:, -1, 0]
        se = xt.std(ddof=1) / np.sqrt(len(xt))
        assert abs(sol.eval_w(1, 0.0, [x0]) - x0) <= 3.0 * se

    def test_zero_generator_martingale_mean_identity(self):
        # with the constant in the basis, every projection preserves means,
        # so the start value equals the terminal sample mean to solver noise
        spec = oracle_spec(g=lambda x: np.atleast_2d(x)[:, 0] ** 2)
        grid = nb.TimeGrid(0.0, 1.0, 30)
        bundle = nb.simulate_reference(spec, grid, [0.4], 5_000, 17)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        target = float(np.mean(spec.terminal_cost[0](bundle.states[:, -1])))
        assert sol.eval_w(1, 0.0, [0.4]) == pytest.approx(target, abs=1e-7)

    def test_quadratic_terminal_heat_flow(self):
        # value map is x^2 + (T - t)
        spec = oracle_spec(g=lambda x: np.atleast_2d(x)[:, 0] ** 2)
        grid = nb.TimeGrid(0.0, 1.0, 50)
        bundle = nb.simulate_reference(spec, grid, [0.0], 50_000, 23)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        assert sol.eval_w(1, 0.0, [0.0]) == pytest.approx(1.0, rel=0.02)
        assert sol.eval_w(1, 0.5, [0.0]) == pytest.approx(0.5, rel=0.02)
        # off-center probe sits in the cloud's tail: wider band
        assert sol.eval_w(1, 0.5, [1.0]) == pytest.approx(1.5, rel=0.05)

    def test_gradient_generator_shifts_start_value(self):
        # generator equal to the own gradient component: start value x0 + T
        x0 = 0.5
        spec = oracle_spec(drift_const=1.0)
        grid = nb.TimeGrid(0.0, 1.0, 50)
        bundle = nb.simulate_reference(spec, grid, [x0], 50_000, 29)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        assert sol.eval_w(1, 0.0, [x0]) == pytest.approx(x0 + 1.0, rel=0.02)

    def test_gradient_map_of_identity_terminal(self):
        spec = oracle_spec()
        grid = nb.TimeGrid(0.0, 1.0, 50)
        bundle = nb.simulate_reference(spec, grid, [0.0], 50_000, 31)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.uniform(0.05, 0.95)
            # stay inside the simulated cloud (std sqrt(t) at time t)
            x = rng.uniform(-1.5, 1.5, size=1) * np.sqrt(t)
            z = sol.eval_z(1, t, x)
            assert z[0] == pytest.approx(1.0, abs=0.05)


class TestEvaluation:
    def test_terminal_coefficients_reproduce_terminal_cost(self):
        spec = oracle_spec(g=lambda x: np.atleast_2d(x)[:, 0] ** 2)
        grid = nb.TimeGrid(0.0, 1.0, 20)
        bundle = nb.simulate_reference(spec, grid, [0.0], 5_000, 3)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        # degree-2 basis represents the quadratic terminal cost exactly up
        # to the ridge floor's perturbation of the normal equations
        assert sol.diagnostics["terminal_residual"]["1"] <= 1e-6
        xt = bundle.states[:, -1]
        pred = sol.eval_w(1, grid.T, xt)
        assert np.max(np.abs(pred - xt[:, 0] ** 2)) <= 1e-6

    def test_left_knot_time_lookup(self):
        spec = oracle_spec()
        grid = nb.TimeGrid(0.0, 1.0, 10)
        bundle = nb.simulate_reference(spec, grid, [0.0], 3_000, 4)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        x = np.array([[0.7]])
        mid = sol.eval_w(1, 0.25, x)  # inside (t_2, t_3) -> knot 2
        assert mid == sol.eval_w(1, 0.2, x)

    def test_extrapolation_flagged(self):
        spec = oracle_spec()
        grid = nb.TimeGrid(0.0, 1.0, 10)
        bundle = nb.simulate_reference(spec, grid, [0.0], 3_000, 4)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        assert not sol.diagnostics["extrapolation_seen"]
        sol.eval_w(1, 0.5, [50.0])
        assert sol.diagnostics["extrapolation_seen"]

    def test_json_roundtrip(self):
        spec = oracle_spec(g=lambda x: np.atleast_2d(x)[:, 0] ** 2)
        grid = nb.TimeGrid(0.0, 1.0, 15)
        bundle = nb.simulate_reference(spec, grid, [0.2], 4_000, 5)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        doc = json.loads(json_dumps(sol.to_doc()))
        back = nb.BsdeSolution.from_doc(doc)
        xs = np.linspace(-1.0, 1.0, 7).reshape(-1, 1)
        for t in (0.0, 0.4, 1.0):
            assert np.array_equal(sol.eval_w(1, t, xs), back.eval_w(1, t, xs))
        for t in (0.0, 0.4):
            assert np.array_equal(sol.eval_z(2, t, xs), back.eval_z(2, t, xs))


class TestDiagnostics:
    def test_fixed_point_residuals_shrink(self):
        spec = nb.lq_game()
        grid = nb.TimeGrid(0.0, 1.0, 25)
        bundle = nb.simulate_reference(spec, grid, [0.0], 10_000, 6)
        sol = nb.solve_coupled(spec, bundle, nb.RegressionBasis("global_poly", 3))
        assert sol.diagnostics["picard_converged"]
        drops = 0
        for res in sol.diagnostics["picard_residuals"]:
            if len(res) == 1 or all(b <= a + 1e-15 for a, b in zip(res[:-1], res[1:])):
                drops += 1
        assert drops >= 0.9 * grid.n_steps

    def test_z_energy_stable_under_path_doubling(self):
        spec = nb.lq_game()
        grid = nb.TimeGrid(0.0, 1.0, 50)
        energies = {}
        for n in (10_000, 20_000):
            bundle = nb.simulate_reference(spec, grid, [0.0], n, 44)
            sol = nb.solve_coupled(spec, bundle, DEG2)
            energies[n] = sol.diagnostics["z_energy"]
        for player in ("1", "2"):
            a, b = energies[10_000][player], energies[20_000][player]
            assert np.isfinite(b)
            assert abs(b / a - 1.0) < 0.10

    def test_solver_deterministic(self):
        spec = nb.lq_game()
        grid = nb.TimeGrid(0.0, 1.0, 20)
        bundle = nb.simulate_reference(spec, grid, [0.0], 5_000, 7)
        s1 = nb.solve_coupled(spec, bundle, DEG2)
        s2 = nb.solve_coupled(spec, bundle, DEG2)
        assert s1.coeffs_y.tobytes() == s2.coeffs_y.tobytes()
        assert s1.coeffs_z.tobytes() == s2.coeffs_z.tobytes()

    def test_basis_richness_guard(self):
        spec = oracle_spec()
        grid = nb.TimeGrid(0.0, 1.0, 5)
        bundle = nb.simulate_reference(spec, grid, [0.0], 50, 8)
        with pytest.raises(ValueError, match="basis too rich"):
            nb.solve_coupled(spec, bundle, nb.RegressionBasis("global_poly", 5))

    def test_singular_regression_names_knot(self):
        # freeze the second coordinate: its basis columns are collinear
        n_of = lambda x: np.atleast_2d(x).shape[0]

        def sigma(t, x):
            out = np.zeros((n_of(x), 2, 2))
            out[:, 0, 0] = 1.0
            return out

        spec = nb.GameSpec(
            dim_m=2, horizon_T=1.0, sigma=sigma, sigma_inv=sigma,
            drift_f=lambda t, x, u, v: np.zeros((n_of(x), 2)),
            running_cost=(lambda t, x, u, v: np.zeros(n_of(x)),) * 2,
            terminal_cost=(lambda x: np.atleast_2d(x)[:, 0],) * 2,
            control_box_1=Box([-1.0], [1.0]), control_box_2=Box([0.0], [1.0]),
            best_response=(lambda t, x, z1, z2: np.zeros((n_of(x), 1)),) * 2)
        bundle = nb.simulate_reference(spec, nb.TimeGrid(0.0, 1.0, 5), [0.0, 0.0], 500, 9)
        with pytest.raises(nb.RegressionError, match="knot 5"):
            nb.solve_coupled(spec, bundle, nb.RegressionBasis("global_poly", 2))

    def test_reference_bundle_required(self):
        spec = nb.lq_game()
        fb = nb.equilibrium_feedbacks(spec)
        ctl = nb.simulate_controlled(spec, nb.TimeGrid(0.0, 1.0, 5), [0.0], fb,
                                     None, 100, 10)
        with pytest.raises(ValueError):
            nb.solve_coupled(spec, ctl, DEG2)


class TestLogStateBasis:
    def test_positive_diffusion_consistency(self):
        # heavy-tailed positive cloud: the log-state partitioned basis
        # keeps the solved start value consistent with the payoff sweep
        spec = nb.gbm_extension_game()
        grid = nb.TimeGrid(0.0, 1.0, 50)
        bundle = nb.simulate_reference(spec, grid, [1.0], 20_000, 42)
        basis = nb.RegressionBasis("local_partition", 2, cells_per_axis=8,
                                   log_state=True)
        sol = nb.solve_coupled(spec, bundle, basis)
        fb = nb.equilibrium_feedbacks(spec)
        report = nb.verify_w0_equals_j(spec, sol, fb, grid, [1.0], 20_000, 42)
        assert report.passed

    def test_roundtrip_keeps_log_flag(self):
        spec = nb.gbm_extension_game()
        # dt must keep the multiplicative Euler scheme positive
        grid = nb.TimeGrid(0.0, 1.0, 40)
        bundle = nb.simulate_reference(spec, grid, [1.0], 2_000, 2)
        basis = nb.RegressionBasis("local_partition", 1, cells_per_axis=4,
                                   log_state=True)
        sol = nb.solve_coupled(spec, bundle, basis)
        back = nb.BsdeSolution.from_doc(sol.to_doc())
        assert back.basis.log_state
        xs = np.linspace(0.5, 2.0, 5).reshape(-1, 1)
        assert np.array_equal(sol.eval_w(1, 0.4, xs), back.eval_w(1, 0.4, xs))

    def test_log_state_requires_positive_states(self):
        spec = nb.lq_game()  # states cross zero
        grid = nb.TimeGrid(0.0, 1.0, 10)
        bundle = nb.simulate_reference(spec, grid, [0.0], 2_000, 3)
        with pytest.raises(ValueError, match="positive"):
            nb.solve_coupled(spec, bundle,
                             nb.RegressionBasis("global_poly", 2, log_state=True))


class TestGrowthDiagnostic:
    def test_quadratic_exponent(self):
        spec = oracle_spec(g=lambda x: np.atleast_2d(x)[:, 0] ** 2)
        grid = nb.TimeGrid(0.0, 1.0, 30)
        bundle = nb.simulate_reference(spec, grid, [0.0], 20_000, 11)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        report = nb.growth_diagnostic(sol, [4.0, 8.0, 16.0])
        assert report.lambda_hat[1] == pytest.approx(2.0, abs=0.2)

    def test_constant_terminal_flat_exponent(self):
        spec = oracle_spec(g=lambda x: np.ones(np.atleast_2d(x).shape[0]))
        grid = nb.TimeGrid(0.0, 1.0, 30)
        bundle = nb.simulate_reference(spec, grid, [0.0], 20_000, 12)
        sol = nb.solve_coupled(spec, bundle, DEG2)
        report = nb.growth_diagnostic(sol, [4.0, 8.0, 16.0])
        assert abs(report.lambda_hat[1]) <= 0.2

    def test_lq_exponent_stable_across_levels(self):
        spec = nb.lq_game()
        grid = nb.TimeGrid(0.0, 1.0, 25)
        bundle = nb.simulate_reference(spec, grid, [0.0], 10_000, 13)
        reports = {}
        for level in (8, 16):
            sol = nb.solve_coupled(spec, bundle, DEG2,
                                   mollify=nb.MollifyParams(level=level, quad_points=9))
            reports[level] = nb.growth_diagnostic(sol, [4.0, 8.0, 16.0])
        stability = nb.growth_stability(reports[8], reports[16])
        assert stability["stable"]
        for player in (1, 2):
            assert stability[player]["rel_change"] <= 0.20
