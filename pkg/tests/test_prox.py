import math

import numpy as np
import pytest
from scipy import optimize

from epirecon.prox import (
    Box,
    EpigraphBall,
    SumHalfspace,
    conjugate_prox,
    project_box,
    project_l2_ball,
    project_squared_distance_epigraph,
    project_sum_halfspace,
    soft_threshold,
    squared_distance_epigraph_root,
)

import helpers


class TestSoftThreshold:
    def test_shrinks_above_threshold(self):
        assert np.array_equal(soft_threshold(np.array([3.0]), 1.0), [2.0])

    def test_dead_zone(self):
        assert np.array_equal(soft_threshold(np.array([-0.5]), 1.0), [0.0])

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            soft_threshold(np.array([1.0]), 0.0)

    def test_scalar_grid_oracle(self):
        # prox minimizes gamma*|y| + 0.5*(y - x)^2; check against dense search
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = float(rng.uniform(-4, 4))
            gamma = float(rng.uniform(0.1, 2.0))
            lo, hi = -5.0, 5.0
            for _ in range(4):
                grid = np.linspace(lo, hi, 4001)
                obj = gamma * np.abs(grid) + 0.5 * (grid - x) ** 2
                k = int(np.argmin(obj))
                span = (hi - lo) / 4000
                lo, hi = grid[k] - span, grid[k] + span
            best = 0.5 * (lo + hi)
            out = soft_threshold(np.array([x]), gamma)[0]
            assert out == pytest.approx(best, abs=1e-6)


class TestProjectBox:
    def test_clamps(self):
        box = Box(0.0, 255.0)
        assert np.array_equal(project_box(np.array([-5.0, 100.0, 300.0]), box), [0.0, 100.0, 255.0])

    def test_identity_inside(self):
        box = Box(-1.0, 1.0)
        x = np.array([0.5, -0.25])
        assert np.array_equal(project_box(x, box), x)

    def test_coordinatewise_oracle(self):
        rng = np.random.default_rng(1)
        box = Box(-0.7, 1.3)
        x = rng.uniform(-3, 3, 50)
        out = project_box(x, box)
        for xi, oi in zip(x, out):
            grid = np.linspace(box.lower, box.upper, 20001)
            best = grid[np.argmin(np.abs(grid - xi))]
            assert abs(oi - best) <= 1e-4

    def test_rejects_inverted_box(self):
        with pytest.raises(ValueError):
            Box(2.0, 1.0)


class TestProjectSumHalfspace:
    def test_feasible_point_unchanged(self):
        hs = SumHalfspace(2, 1.0)
        assert np.array_equal(project_sum_halfspace(np.array([0.1, 0.2]), hs), [0.1, 0.2])

    def test_uniform_shift(self):
        hs = SumHalfspace(3, 1.0)
        out = project_sum_halfspace(np.array([0.5, 0.5, 0.5]), hs)
        assert out == pytest.approx([1 / 3, 1 / 3, 1 / 3], abs=1e-15)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            project_sum_halfspace(np.zeros(3), SumHalfspace(2, 1.0))

    def test_qp_oracle_small_dims(self):
        rng = np.random.default_rng(2)
        for dim in (1, 2, 3, 4):
            hs = SumHalfspace(dim, 1.5)
            for _ in range(10):
                x = rng.uniform(-2, 2, dim)
                out = project_sum_halfspace(x, hs)
                assert out.sum() <= hs.budget + 1e-12
                res = optimize.minimize(
                    lambda e: np.sum((e - x) ** 2),
                    np.zeros(dim),
                    constraints=[{"type": "ineq", "fun": lambda e: hs.budget - e.sum()}],
                    method="SLSQP",
                )
                assert np.linalg.norm(out - x) <= np.linalg.norm(res.x - x) + 1e-6


class TestProjectL2Ball:
    def test_scaling_case(self):
        out = project_l2_ball(np.array([3.0, 4.0]), np.zeros(2), 1.0)
        assert out == pytest.approx([0.6, 0.8], abs=1e-15)

    def test_inside_unchanged(self):
        y = np.array([0.1, 0.2])
        assert np.array_equal(project_l2_ball(y, np.zeros(2), 1.0), y)

    def test_center_input_returns_center(self):
        c = np.array([1.0, -2.0])
        assert np.array_equal(project_l2_ball(c.copy(), c, 0.0), c)

    def test_rejects_mismatch(self):
        with pytest.raises(ValueError):
            project_l2_ball(np.zeros(2), np.zeros(3), 1.0)

    def test_bisection_oracle(self):
        # p = c + (y - c)/(1 + lam) with lam >= 0 chosen so the point is on
        # the sphere; solve for lam by bisection and compare
        rng = np.random.default_rng(3)
        for _ in range(25):
            dim = int(rng.integers(1, 6))
            c = rng.standard_normal(dim)
            y = rng.standard_normal(dim) * 3
            radius = float(rng.uniform(0.1, 2.0))
            out = project_l2_ball(y, c, radius)
            d = np.linalg.norm(y - c)
            if d <= radius:
                expected = y
            else:
                lo, hi = 0.0, 1e12
                for _ in range(200):
                    lam = 0.5 * (lo + hi)
                    if d / (1.0 + lam) > radius:
                        lo = lam
                    else:
                        hi = lam
                expected = c + (y - c) / (1.0 + 0.5 * (lo + hi))
            assert out == pytest.approx(expected, abs=1e-8)


class TestEpigraphProjection:
    def test_inside_branch_returns_input(self):
        ball = EpigraphBall(np.zeros(2))
        point, height = project_squared_distance_epigraph(np.array([0.5, 0.0]), 0.3, ball)
        assert np.array_equal(point, [0.5, 0.0])
        assert height == 0.3

    def test_single_root_case(self):
        # d=1, zeta=0: root of 2x^3 + x - 1 = 0, frozen from the bisection oracle
        ball = EpigraphBall(np.zeros(2))
        point, height = project_squared_distance_epigraph(np.array([1.0, 0.0]), 0.0, ball)
        assert point[0] == pytest.approx(0.5897545123014583, abs=1e-9)
        assert point[1] == 0.0
        assert height == pytest.approx(0.34781038477993087, abs=1e-9)

    def test_three_real_roots_case(self):
        # d=2.1, zeta=4 has a negative discriminant; positive root frozen
        # from the bisection oracle
        ball = EpigraphBall(np.zeros(1))
        point, height = project_squared_distance_epigraph(np.array([2.1]), 4.0, ball)
        assert point[0] == pytest.approx(2.005858105245024, abs=1e-9)
        assert height == pytest.approx(4.0234667383771585, abs=1e-9)

    def test_center_input_with_negative_height(self):
        ball = EpigraphBall(np.array([1.0, 2.0]))
        point, height = project_squared_distance_epigraph(np.array([1.0, 2.0]), -3.0, ball)
        assert np.array_equal(point, [1.0, 2.0])
        assert height == 0.0

    def test_rejects_nonfinite(self):
        ball = EpigraphBall(np.zeros(1))
        with pytest.raises(ValueError):
            project_squared_distance_epigraph(np.array([np.nan]), 0.0, ball)
        with pytest.raises(ValueError):
            project_squared_distance_epigraph(np.array([1.0]), np.inf, ball)

    def test_cubic_residual_invariant(self):
        rng = np.random.default_rng(4)
        for _ in range(2000):
            d = float(rng.uniform(1e-6, 10.0))
            zeta = float(rng.uniform(-5.0, 10.0))
            if d * d <= zeta:
                continue
            beta = squared_distance_epigraph_root(d, zeta)
            residual = 2.0 * beta**3 + (1.0 - 2.0 * zeta) * beta - d
            assert abs(residual) <= 1e-8 * (1.0 + abs(d) + abs(zeta))
            assert beta == pytest.approx(helpers.cubic_root_bisect(d, zeta), abs=1e-9)

    def test_matches_brute_force_nearest_point(self):
        rng = np.random.default_rng(5)
        count = 0
        while count < 500:
            d = float(rng.uniform(0.0, 10.0))
            zeta = float(rng.uniform(-5.0, 10.0))
            if d * d <= zeta or d == 0.0:
                continue
            count += 1
            ball = EpigraphBall(np.zeros(1))
            point, height = project_squared_distance_epigraph(np.array([d]), zeta, ball)
            got = math.hypot(point[0] - d, height - zeta)
            _, _, want = helpers.epigraph_nearest_radial(d, zeta)
            assert got <= want + 1e-6

    def test_vector_projection_reduces_to_radial(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            dim = int(rng.integers(1, 7))
            center = rng.standard_normal(dim)
            y = center + rng.standard_normal(dim) * 2
            zeta = float(rng.uniform(-2, 4))
            ball = EpigraphBall(center)
            point, height = project_squared_distance_epigraph(y, zeta, ball)
            d = np.linalg.norm(y - center)
            if d * d <= zeta:
                continue
            s_expected, h_expected, _ = helpers.epigraph_nearest_radial(d, zeta)
            assert np.linalg.norm(point - center) == pytest.approx(s_expected, abs=1e-6)
            assert height == pytest.approx(h_expected, abs=1e-6)


def _epigraph_apply(x):
    ball = EpigraphBall(np.array([0.3, -0.2, 1.0]))
    point, height = project_squared_distance_epigraph(x[:3], x[3], ball)
    return np.concatenate([point, [height]])


def _halfspace_apply(x):
    return project_sum_halfspace(x, SumHalfspace(x.size, 2.0))


def _box_apply(x):
    return project_box(x, Box(-1.0, 1.5))


def _ball_apply(x):
    return project_l2_ball(x, np.full(x.size, 0.25), 1.2)


PROJECTIONS = [
    ("box", _box_apply, 6),
    ("ball", _ball_apply, 6),
    ("halfspace", _halfspace_apply, 5),
    ("epigraph", _epigraph_apply, 4),
]


@pytest.mark.parametrize("name,apply,dim", PROJECTIONS)
def test_projection_idempotent(name, apply, dim):
    rng = np.random.default_rng(7)
    for _ in range(1000):
        x = rng.standard_normal(dim) * 3
        once = apply(x)
        twice = apply(once)
        assert np.linalg.norm(twice - once) <= 1e-10 * (1.0 + np.linalg.norm(once))


@pytest.mark.parametrize("name,apply,dim", PROJECTIONS)
def test_projection_nonexpansive(name, apply, dim):
    rng = np.random.default_rng(8)
    for _ in range(1000):
        x = rng.standard_normal(dim) * 3
        y = rng.standard_normal(dim) * 3
        lhs = np.linalg.norm(apply(x) - apply(y))
        rhs = np.linalg.norm(x - y) * (1.0 + 1e-12)
        assert lhs <= rhs


def test_projection_membership():
    rng = np.random.default_rng(9)
    box = Box(-1.0, 1.5)
    hs = SumHalfspace(5, 2.0)
    ball_center = np.full(6, 0.25)
    epi = EpigraphBall(np.array([0.3, -0.2, 1.0]))
    for _ in range(1000):
        x = rng.standard_normal(6) * 3
        out = project_box(x, box)
        assert out.min() >= box.lower - 1e-10 and out.max() <= box.upper + 1e-10
        out = project_l2_ball(x, ball_center, 1.2)
        assert np.linalg.norm(out - ball_center) <= 1.2 + 1e-10
        e = rng.standard_normal(5) * 3
        out = project_sum_halfspace(e, hs)
        assert out.sum() <= hs.budget + 1e-12
        point, height = project_squared_distance_epigraph(x[:3], float(x[3]), epi)
        assert np.sum((point - epi.center) ** 2) <= height + 1e-10


class TestConjugateProx:
    def test_l1_dual_inside_ball(self):
        out = conjugate_prox(soft_threshold, np.array([0.4]), 1.0)
        assert out == pytest.approx([0.4], abs=1e-15)

    def test_l1_dual_clamp(self):
        out = conjugate_prox(soft_threshold, np.array([5.0]), 1.0)
        assert out == pytest.approx([1.0], abs=1e-15)

    def test_moreau_identity_reconstructs_input(self):
        rng = np.random.default_rng(10)
        box = Box(-0.5, 2.0)

        def prox_indicator(v, _t):
            return project_box(v, box)

        for _ in range(100):
            x = rng.standard_normal(8) * 4
            gamma = float(rng.uniform(0.2, 3.0))
            back = conjugate_prox(prox_indicator, x, gamma) + gamma * prox_indicator(x / gamma, 1.0 / gamma)
            assert back == pytest.approx(x, abs=1e-12)

    def test_moreau_identity_for_l1(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            x = rng.standard_normal(5) * 2
            gamma = float(rng.uniform(0.2, 3.0))
            back = conjugate_prox(soft_threshold, x, gamma) + gamma * soft_threshold(x / gamma, 1.0 / gamma)
            assert back == pytest.approx(x, abs=1e-12)

    def test_rejects_nonpositive_gamma(self):
        with pytest.raises(ValueError):
            conjugate_prox(soft_threshold, np.array([1.0]), -1.0)
