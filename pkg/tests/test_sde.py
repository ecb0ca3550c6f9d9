"""Path simulation, counter-based reproducibility, change-of-measure weights."""

import numpy as np
import pytest

import nashbsde as nb
from nashbsde.games import Box
from nashbsde.sde import PathBundle, _normals


def unit_spec(drift=None):
    n_of = lambda x: np.atleast_2d(x).shape[0]
    const = lambda val: (lambda t, x, z1, z2: np.full((n_of(x), 1), val))
    return nb.GameSpec(
        dim_m=1, horizon_T=1.0,
        sigma=lambda t, x: np.ones((n_of(x), 1, 1)),
        sigma_inv=lambda t, x: np.ones((n_of(x), 1, 1)),
        drift_f=drift or (lambda t, x, u, v: np.zeros((n_of(x), 1))),
        running_cost=(lambda t, x, u, v: np.zeros(n_of(x)),) * 2,
        terminal_cost=(lambda x: np.atleast_2d(x)[:, 0],) * 2,
        control_box_1=Box([-1.0], [1.0]), control_box_2=Box([0.0], [1.0]),
        best_response=(const(0.0), const(0.0)),
    )


def constant_feedbacks(u_val, v_val):
    def mk(player, val):
        return nb.FeedbackControl(player, f"const {val}",
                                  lambda t, x, z1, z2, val=val:
                                  np.full((np.atleast_2d(x).shape[0], 1), val))
    return mk(1, u_val), mk(2, v_val)


GRID = nb.TimeGrid(0.0, 1.0, 50)


class TestReference:
    def test_brownian_terminal_variance(self):
        spec = unit_spec()
        b = nb.simulate_reference(spec, nb.TimeGrid(0.0, 1.0, 100), [0.0], 100_000, 5)
        xt = b.states[:, -1, 0]
        var = xt.var(ddof=1)
        # SE of the sample variance of a Gaussian: var * sqrt(2/(n-1))
        se = var * np.sqrt(2.0 / (len(xt) - 1))
        assert abs(var - 1.0) <= 4.0 * se

    def test_zero_diffusion_paths_constant(self):
        spec = unit_spec()
        spec.sigma = lambda t, x: np.zeros((np.atleast_2d(x).shape[0], 1, 1))
        b = nb.simulate_reference(spec, GRID, [0.7], 50, 1)
        assert np.all(b.states == 0.7)

    def test_state_scaled_martingale(self):
        spec = nb.gbm_extension_game()
        b = nb.simulate_reference(spec, nb.TimeGrid(0.0, 1.0, 100), [1.0], 50_000, 9)
        xt = b.states[:, -1, 0]
        se = xt.std(ddof=1) / np.sqrt(len(xt))
        assert abs(xt.mean() - 1.0) <= 4.0 * se

    def test_start_states_and_shapes(self):
        spec = unit_spec()
        b = nb.simulate_reference(spec, GRID, [0.3], 17, 2)
        assert b.states.shape == (17, 51, 1)
        assert b.brownian_increments.shape == (17, 50, 1)
        assert np.all(b.states[:, 0, 0] == 0.3)
        assert b.scheme_tag == "reference"

    def test_increment_moments(self):
        b = nb.simulate_reference(unit_spec(), GRID, [0.0], 60_000, 3)
        incr = b.brownian_increments[:, 7, 0]
        n = len(incr)
        se_mean = np.sqrt(GRID.dt / n)
        assert abs(incr.mean()) <= 4.0 * se_mean
        var = incr.var(ddof=1)
        assert abs(var - GRID.dt) <= 4.0 * var * np.sqrt(2.0 / (n - 1))


class TestReproducibility:
    def test_bit_exact_repeat(self):
        spec = unit_spec()
        a = nb.simulate_reference(spec, GRID, [0.0], 1000, 77)
        b = nb.simulate_reference(spec, GRID, [0.0], 1000, 77)
        assert a.states.tobytes() == b.states.tobytes()
        assert a.brownian_increments.tobytes() == b.brownian_increments.tobytes()

    def test_path_independent_of_ensemble_size(self):
        small = _normals(123, 300, 50, 1)
        large = _normals(123, 1000, 50, 1)
        assert np.array_equal(large[:300], small)

    def test_per_path_reconstruction(self):
        spec = unit_spec()
        b = nb.simulate_reference(spec, GRID, [0.0], 600, 123)
        for j in (0, 255, 256, 599):
            incr = nb.path_increments(123, j, GRID, 1)
            assert np.array_equal(incr, b.brownian_increments[j])


class TestControlled:
    def test_zero_drift_matches_reference(self):
        spec = unit_spec()
        ref = nb.simulate_reference(spec, GRID, [0.0], 400, 21)
        fb = constant_feedbacks(0.4, 0.6)  # drift is identically zero anyway
        ctl = nb.simulate_controlled(spec, GRID, [0.0], fb, None, 400, 21)
        assert np.array_equal(ref.states, ctl.states)
        assert ctl.scheme_tag == "controlled"

    def test_constant_drift_mean(self):
        spec = unit_spec(drift=lambda t, x, u, v: np.atleast_2d(u)[:, :1])
        fb = constant_feedbacks(0.7, 0.0)
        b = nb.simulate_controlled(spec, nb.TimeGrid(0.0, 1.0, 100), [0.2], fb,
                                   None, 50_000, 4)
        xt = b.states[:, -1, 0]
        se = xt.std(ddof=1) / np.sqrt(len(xt))
        assert abs(xt.mean() - 0.9) <= 4.0 * se

    def test_linear_drift_mean(self):
        spec = nb.lq_game(a=0.5, b=0.0, c=0.0)
        fb = nb.equilibrium_feedbacks(spec)
        b = nb.simulate_controlled(spec, nb.TimeGrid(0.0, 1.0, 100), [1.0], fb,
                                   None, 50_000, 8)
        xt = b.states[:, -1, 0]
        se = xt.std(ddof=1) / np.sqrt(len(xt))
        # Euler mean is (1 + a dt)^K; allow that bias inside the band
        assert abs(xt.mean() - np.exp(0.5)) <= 4.0 * se + abs(
            (1 + 0.5 * 0.01) ** 100 - np.exp(0.5))

    def test_nonfinite_diffusion_aborts(self):
        spec = unit_spec()
        spec.sigma = lambda t, x: np.full((np.atleast_2d(x).shape[0], 1, 1), np.nan)
        with pytest.raises(nb.SimulationError, match="step 0"):
            nb.simulate_reference(spec, GRID, [0.0], 10, 1)


class TestGirsanovWeight:
    def test_zero_drift_unit_weights(self):
        spec = unit_spec()
        b = nb.simulate_reference(spec, GRID, [0.0], 200, 11)
        w = nb.girsanov_weight(spec, b, constant_feedbacks(0.3, 0.9), None)
        assert np.all(w == 1.0)

    def test_constant_drift_martingale_mean(self):
        spec = unit_spec(drift=lambda t, x, u, v: np.atleast_2d(u)[:, :1])
        b = nb.simulate_reference(spec, nb.TimeGrid(0.0, 1.0, 100), [0.0], 100_000, 12)
        w = nb.girsanov_weight(spec, b, constant_feedbacks(0.5, 0.0), None)
        se = w.std(ddof=1) / np.sqrt(len(w))
        assert abs(w.mean() - 1.0) <= 4.0 * se

    def test_zero_increment_path_closed_form(self):
        spec = unit_spec(drift=lambda t, x, u, v: np.atleast_2d(u)[:, :1])
        grid = nb.TimeGrid(0.0, 1.0, 25)
        bundle = PathBundle(grid=grid, n_paths=1,
                            brownian_increments=np.zeros((1, 25, 1)),
                            states=np.zeros((1, 26, 1)), seed=0,
                            scheme_tag="reference")
        c = 0.8
        w = nb.girsanov_weight(spec, bundle, constant_feedbacks(c, 0.0), None)
        assert w[0] == pytest.approx(np.exp(-c * c * 1.0 / 2.0), rel=1e-14)

    def test_bounded_feedback_weight_means(self):
        spec = nb.lq_game()
        b = nb.simulate_reference(spec, nb.TimeGrid(0.0, 1.0, 100), [0.0], 50_000, 13)
        for fb in (constant_feedbacks(1.0, 1.0), constant_feedbacks(-1.0, 0.0)):
            w = nb.girsanov_weight(spec, b, fb, None)
            se = w.std(ddof=1) / np.sqrt(len(w))
            assert abs(w.mean() - 1.0) <= 4.0 * se

    def test_controlled_bundle_rejected(self):
        spec = unit_spec()
        fb = constant_feedbacks(0.1, 0.1)
        ctl = nb.simulate_controlled(spec, GRID, [0.0], fb, None, 20, 3)
        with pytest.raises(ValueError):
            nb.girsanov_weight(spec, ctl, fb, None)


class TestMomentStability:
    def test_sup_moment_bound_stable_under_doubling(self):
        spec = unit_spec()
        grid = nb.TimeGrid(0.0, 1.0, 50)
        x0 = 1.0
        cs = {}
        for n in (20_000, 40_000):
            b = nb.simulate_reference(spec, grid, [x0], n, 31)
            sup = np.max(np.abs(b.states[:, :, 0]), axis=1)
            for q in (1, 2):
                cs[(n, q)] = np.mean(sup ** (2 * q)) / (1.0 + x0 ** (2 * q))
        for q in (1, 2):
            assert np.isfinite(cs[(40_000, q)])
            assert abs(cs[(40_000, q)] / cs[(20_000, q)] - 1.0) < 0.15

    def test_weight_moment_stable_under_doubling(self):
        spec = nb.lq_game()
        grid = nb.TimeGrid(0.0, 1.0, 50)
        fb = constant_feedbacks(1.0, 1.0)
        p = 1.25
        moments = {}
        for n in (20_000, 40_000):
            b = nb.simulate_reference(spec, grid, [0.0], n, 37)
            w = nb.girsanov_weight(spec, b, fb, None)
            moments[n] = np.mean(w ** p)
        assert np.isfinite(moments[40_000])
        assert abs(moments[40_000] / moments[20_000] - 1.0) < 0.15
