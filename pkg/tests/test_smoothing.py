"""State truncation, gradient cutoff, regularized generators."""

import math

import numpy as np
import pytest

import nashbsde as nb
from nashbsde.games import Box
from nashbsde.smoothing import (MollifyParams, _kernel_nodes,
                                composed_hamiltonian_batch,
                                mollified_generator_batch,
                                sup_distance_on_compact)


def constant_cost_spec(const=3.25):
    """Zero-drift game whose Hamiltonians are identically ``const``."""
    n_of = lambda x: np.atleast_2d(x).shape[0]
    return nb.GameSpec(
        dim_m=1, horizon_T=1.0,
        sigma=lambda t, x: np.ones((n_of(x), 1, 1)),
        sigma_inv=lambda t, x: np.ones((n_of(x), 1, 1)),
        drift_f=lambda t, x, u, v: np.zeros((n_of(x), 1)),
        running_cost=(lambda t, x, u, v: np.full(n_of(x), const),) * 2,
        terminal_cost=(lambda x: np.atleast_2d(x)[:, 0],) * 2,
        control_box_1=Box([-1.0], [1.0]), control_box_2=Box([0.0], [1.0]),
        best_response=(lambda t, x, z1, z2: np.zeros((n_of(x), 1)),) * 2,
    )


class TestTruncate:
    def test_clamp_both_sides(self):
        out = nb.truncate_state([3.0, -5.0], 2)
        assert np.array_equal(out, [2.0, -2.0])

    def test_identity_inside_box(self):
        x = np.array([0.9, -2.4, 3.0])
        assert np.array_equal(nb.truncate_state(x, 3), x)

    def test_identity_small_point(self):
        assert np.array_equal(nb.truncate_state([0.5], 1), [0.5])

    def test_level_must_be_positive(self):
        with pytest.raises(ValueError):
            nb.truncate_state([1.0], 0)


class TestCutoff:
    def test_inner_plateau(self):
        for level in (1, 3):
            assert nb.cutoff([0.5 * level], [0.5 * level], level) == 1.0
        assert nb.cutoff([1.0], [0.0], 1) == 1.0  # radius exactly at the knee

    def test_outer_plateau(self):
        assert nb.cutoff([2.0], [0.0], 1) == 0.0
        assert nb.cutoff([3.0], [4.0], 2) == 0.0  # 9 + 16 = 25 > 16

    def test_frozen_midpoint_value(self):
        # squared radius 2.5 n^2, scaled bridge coordinate s = 0.5:
        # exp(1 - 1/(1 - 0.25)) = exp(-1/3)
        level = 2
        y = [math.sqrt(5.0)]
        z = [math.sqrt(5.0)]
        assert nb.cutoff(y, z, level) == pytest.approx(0.7165313105737893, abs=1e-15)

    def test_monotone_in_radius(self):
        radii = np.linspace(1.0, 2.0, 40)
        vals = [nb.cutoff([r], [0.0], 1) for r in radii]
        assert all(a >= b - 1e-15 for a, b in zip(vals[:-1], vals[1:]))
        assert vals[0] == 1.0 and vals[-1] == 0.0


class TestKernel:
    def test_unit_mass_exact(self):
        for m, q in ((1, 9), (1, 15), (2, 7)):
            _, w = _kernel_nodes(m, q, 1.0)
            assert abs(w.sum() - 1.0) <= 1e-12  # well inside the 1e-6 contract

    def test_high_dimension_nodes_deterministic(self):
        n1, w1 = _kernel_nodes(3, 5, 1.0)
        n2, w2 = _kernel_nodes(3, 5, 1.0)
        assert np.array_equal(n1, n2) and np.array_equal(w1, w2)
        assert abs(w1.sum() - 1.0) <= 1e-12


class TestMollifiedGenerator:
    def test_zero_outside_double_radius(self):
        spec = nb.lq_game()
        params = MollifyParams(level=2, quad_points=9)
        # |z1|^2 + |z2|^2 = 32 >= 4 * level^2 = 16
        val = nb.mollified_generator(spec, 1, 0.0, [0.5], [4.0], [4.0], params)
        assert val == 0.0

    def test_constant_generator_reproduced(self):
        const = 3.25
        spec = constant_cost_spec(const)
        params = MollifyParams(level=4, quad_points=9)
        val = nb.mollified_generator(spec, 1, 0.0, [0.3], [0.5], [-0.5], params)
        assert val == pytest.approx(const, rel=1e-12)

    def test_truncation_invariance(self):
        spec = nb.lq_game(a=1.0)
        params = MollifyParams(level=3, quad_points=9)
        far = nb.mollified_generator(spec, 1, 0.0, [10.0], [0.5], [0.2], params)
        clamped = nb.mollified_generator(spec, 1, 0.0, [3.0], [0.5], [0.2], params)
        assert far == clamped

    def test_error_decreases_with_level(self):
        spec = nb.lq_game()
        t, x = 0.3, np.array([0.7])
        z1, z2 = np.array([[0.8]]), np.array([[-0.6]])
        exact = composed_hamiltonian_batch(spec, 1, t, x.reshape(1, -1), z1, z2)[0]
        errs = []
        for level in (4, 8, 16, 32):
            params = MollifyParams(level=level, quad_points=21)
            approx = mollified_generator_batch(spec, 1, t, x.reshape(1, -1),
                                               z1, z2, params)[0]
            errs.append(abs(approx - exact))
        assert errs[-1] <= errs[0]
        assert all(b <= a * 1.05 + 1e-12 for a, b in zip(errs[:-1], errs[1:]))
        assert errs[-1] < 1e-3


class TestGeneratorProperties:
    def test_lq_all_properties(self):
        report = nb.verify_generator_properties(
            nb.lq_game(), MollifyParams(level=8, quad_points=11), 120, seed=2)
        assert report.passed
        assert all(np.isfinite(report.lipschitz[p]) for p in (1, 2))
        assert all(report.growth_const[p] > 0 for p in (1, 2))

    def test_bang_bang_response_still_lipschitz(self):
        spec = nb.lq_game()
        n_of = lambda x: np.atleast_2d(x).shape[0]

        def bang(t, x, z1, z2):
            return np.where(np.atleast_2d(z1)[:, :1] > 0.0, -1.0, 1.0)

        spec.best_response = (bang, lambda t, x, z1, z2: np.zeros((n_of(x), 1)))
        report = nb.verify_generator_properties(
            spec, MollifyParams(level=4, quad_points=11), 120, seed=5)
        assert report.lipschitz_pass

    def test_small_level_cutoff_support(self):
        spec = nb.lq_game()
        params = MollifyParams(level=1, quad_points=9)
        rng = np.random.default_rng(0)
        for _ in range(20):
            z1 = rng.uniform(2.0, 5.0, size=1) * rng.choice([-1, 1])
            z2 = rng.uniform(2.0, 5.0, size=1) * rng.choice([-1, 1])
            if z1[0] ** 2 + z2[0] ** 2 >= 4.0:
                val = nb.mollified_generator(spec, 1, 0.1, [0.0], z1, z2, params)
                assert val == 0.0

    def test_sup_distance_decay_helper(self):
        spec = nb.lq_game()
        d8 = sup_distance_on_compact(spec, 1, 0.0, [0.0],
                                     MollifyParams(level=8, quad_points=11))
        d16 = sup_distance_on_compact(spec, 1, 0.0, [0.0],
                                      MollifyParams(level=16, quad_points=11))
        assert d16 <= d8 * 1.05 + 1e-9
