import itertools

import numpy as np
import pytest

from semistatic.fixtures import BASE_MODEL
from semistatic.pricing import AgentSpec, Market, optimal_value
from semistatic.solver import (
    SolveSettings,
    dual_bound,
    feasibility_start,
    minimize,
    objective_and_gradient,
    solve_lp,
)

from conftest import make_exp_program, make_lp_program

TIGHT = SolveSettings(gap_tol=1e-12)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def golden_section(f, lo, hi, tol=1e-10):
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def refine_grid_search(f, lows, highs, sweeps=60, points=11):
    """Shrinking dense-grid minimization for smooth convex objectives."""
    lows = np.array(lows, dtype=float)
    highs = np.array(highs, dtype=float)
    best = None
    for _ in range(sweeps):
        axes = [np.linspace(lo, hi, points) for lo, hi in zip(lows, highs)]
        best_val, best_pt = np.inf, None
        for pt in itertools.product(*axes):
            val = f(np.array(pt))
            if val < best_val:
                best_val, best_pt = val, np.array(pt)
        span = (highs - lows) / (points - 1)
        lows = np.maximum(lows, best_pt - 1.5 * span)
        highs = np.minimum(highs, best_pt + 1.5 * span)
        best = (best_val, best_pt)
        if span.max() < 1e-9:
            break
    return best


def enumerate_vertices(cost, G, h, lower, upper):
    """Brute-force LP oracle: intersect every n-subset of constraint faces,
    keep the feasible points, return the best objective and minimizer."""
    G = np.asarray(G, dtype=float)
    n = G.shape[1]
    rows = [G[i] for i in range(G.shape[0])]
    rhs = list(np.asarray(h, dtype=float))
    for j in range(n):
        if np.isfinite(lower[j]):
            e = np.zeros(n)
            e[j] = -1.0
            rows.append(e)
            rhs.append(-lower[j])
        if np.isfinite(upper[j]):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(upper[j])
    rows = np.array(rows)
    rhs = np.array(rhs)
    best_val, best_pt = np.inf, None
    for combo in itertools.combinations(range(rows.shape[0]), n):
        A = rows[list(combo)]
        b = rhs[list(combo)]
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        x = np.linalg.solve(A, b)
        if np.all(rows @ x <= rhs + 1e-8):
            val = float(cost @ x)
            if val < best_val:
                best_val, best_pt = val, x
    return best_val, best_pt


def random_exp_instance(rng, n_vars, n_points):
    rows = rng.uniform(-2.0, 2.0, size=(n_points, n_vars))
    offsets = rng.uniform(-1.0, 1.0, size=n_points)
    masses = rng.uniform(0.2, 1.0, size=n_points)
    masses /= masses.sum()
    lower = np.full(n_vars, -1.0)
    upper = np.full(n_vars, 1.0)
    return make_exp_program(
        rows, offsets, masses, kappa=1.0, lower=lower, upper=upper,
        start=np.zeros(n_vars),
    )


# ---------------------------------------------------------------------------
# exponential-sum solves
# ---------------------------------------------------------------------------

class TestMinimize:
    def test_cash_only_closed_form(self):
        agent = AgentSpec(100000.0, 2.0)
        empty = Market(quotes=(), model=BASE_MODEL)
        value = optimal_value(empty, agent, allow_dynamic=False)
        assert value == pytest.approx(np.exp(-2.0), abs=1e-8)

    @pytest.mark.parametrize("seed", range(8))
    def test_one_dimensional_golden_section(self, seed):
        rng = np.random.default_rng(100 + seed)
        program = random_exp_instance(rng, 1, 6)
        sol = minimize(program, TIGHT)
        assert sol.status == "optimal"

        def f(z):
            return float(program.masses @ np.exp(program.offsets + program.rows[:, 0] * z))

        z_star = golden_section(f, -1.0, 1.0)
        assert sol.x[0] == pytest.approx(z_star, abs=1e-6)
        assert sol.objective == pytest.approx(f(z_star), rel=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_two_dimensional_grid_search(self, seed):
        rng = np.random.default_rng(200 + seed)
        program = random_exp_instance(rng, 2, 4)
        sol = minimize(program, TIGHT)

        def f(z):
            return float(program.masses @ np.exp(program.offsets + program.rows @ z))

        _, z_star = refine_grid_search(f, [-1.0, -1.0], [1.0, 1.0])
        np.testing.assert_allclose(sol.x, z_star, atol=1e-4)

    def test_monotone_stage_objectives(self):
        rng = np.random.default_rng(5)
        program = random_exp_instance(rng, 3, 8)
        sol = minimize(program, TIGHT)
        objs = [row["objective"] for row in sol.trace]
        assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))

    def test_mass_scaling_leaves_argmin(self):
        rng = np.random.default_rng(6)
        program = random_exp_instance(rng, 2, 6)
        scaled = program.replace(masses=10.0 * program.masses)
        a = minimize(program, TIGHT)
        b = minimize(scaled, TIGHT)
        np.testing.assert_allclose(a.x, b.x, atol=1e-10)
        assert b.objective == pytest.approx(10.0 * a.objective, rel=1e-12)

    def test_budget_shift_identity(self):
        # with a cash-like column and a budget row, raising the budget by h
        # scales the optimum by exp(-kappa h) exactly
        rng = np.random.default_rng(9)
        rows = np.hstack([rng.uniform(-1, 1, size=(6, 2)), np.full((6, 1), -1.0)])
        masses = rng.uniform(0.5, 1, size=6)
        masses /= masses.sum()
        kappa = 0.8

        def prog(budget):
            return make_exp_program(
                rows, np.zeros(6), masses, kappa,
                lower=[-1, -1, -np.inf], upper=[1, 1, np.inf],
                start=[0, 0, budget - 0.5],
                budget_row=[0.3, -0.2, 1.0], budget_rhs=budget,
            )

        base = minimize(prog(2.0), TIGHT)
        shifted = minimize(prog(2.0 + 0.7), TIGHT)
        assert shifted.objective == pytest.approx(
            base.objective * np.exp(-kappa * 0.7), rel=1e-9
        )

    def test_infeasible_pointwise_program(self):
        program = make_exp_program(
            rows=[[1.0], [-1.0]], offsets=[0.0, 0.0], masses=[0.5, 0.5], kappa=1.0,
            lower=[0.0], upper=[1.0], start=[0.5],
            point_upper=[-5.0, -5.0],
        )
        sol = minimize(program)
        assert sol.status == "infeasible"
        assert sol.objective == np.inf

    def test_pointwise_constrained_solution_feasible(self):
        rng = np.random.default_rng(12)
        program = random_exp_instance(rng, 2, 5)
        cap = 1.2
        constrained = program.replace(point_upper=np.full(5, cap))
        sol = minimize(constrained, TIGHT)
        assert sol.status == "optimal"
        assert constrained.loss_arguments(sol.x).max() <= cap + 1e-10
        assert sol.duals["point"] is not None


# ---------------------------------------------------------------------------
# linear programs
# ---------------------------------------------------------------------------

class TestSolveLP:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_vertex_enumeration(self, seed):
        rng = np.random.default_rng(300 + seed)
        n, m = 3, 5
        G = rng.uniform(-1.0, 1.0, size=(m, n))
        h = rng.uniform(0.5, 1.5, size=m)  # origin strictly feasible
        cost = rng.uniform(-1.0, 1.0, size=n)
        lower = np.zeros(n)
        upper = np.full(n, 2.0)
        program = make_lp_program(cost, G, h, lower, upper, start=np.full(n, 0.25))
        sol = solve_lp(program, TIGHT)
        assert sol.status == "optimal"
        want, _ = enumerate_vertices(cost, G, h, lower, upper)
        assert sol.objective == pytest.approx(want, abs=1e-7)

    def test_weak_duality(self):
        rng = np.random.default_rng(77)
        G = rng.uniform(-1.0, 1.0, size=(4, 2))
        h = rng.uniform(0.5, 1.0, size=4)
        cost = np.array([1.0, -0.5])
        program = make_lp_program(cost, G, h, [0.0, 0.0], [3.0, 3.0], start=[0.2, 0.2])
        sol = solve_lp(program, TIGHT)
        bound = dual_bound(program, sol)
        assert sol.objective >= bound - 1e-7

    def test_unbounded_detected(self):
        # minimize -y with y >= 0 and one harmless row
        program = make_lp_program([-1.0], [[0.0]], [1.0], [0.0], [np.inf], start=[1.0])
        sol = solve_lp(program, SolveSettings(objective_floor=-1e6))
        assert sol.status == "unbounded"

    def test_infeasible_detected(self):
        # y <= -1 conflicts with y in [0, 1]
        program = make_lp_program([1.0], [[1.0]], [-1.0], [0.0], [1.0], start=[0.5])
        sol = solve_lp(program)
        assert sol.status == "infeasible"

    def test_phase1_finds_interior(self):
        program = make_lp_program(
            [0.0, 1.0], [[-1.0, 0.0], [0.0, -1.0]], [-0.5, -0.25],
            [0.0, 0.0], [4.0, 4.0], start=[0.1, 0.1],
        )
        s_star, point = feasibility_start(program)
        assert s_star < 0
        assert np.all(program.rows @ point <= program.point_upper)


# ---------------------------------------------------------------------------
# objective / gradient contract
# ---------------------------------------------------------------------------

class TestObjectiveAndGradient:
    def test_flat_rows(self):
        program = make_exp_program(
            rows=np.array([[0.0, -1.0], [0.0, -1.0]]),
            offsets=[0.0, 0.0], masses=[0.4, 0.6], kappa=0.7,
            lower=[-1, -np.inf], upper=[1, np.inf], start=[0, 0],
        )
        value, grad = objective_and_gradient(program, np.zeros(2))
        assert value == pytest.approx(1.0)
        # pure-cash column: every row carries -1, so the entry is -kappa
        assert grad[1] == pytest.approx(-0.7)
        assert grad[0] == pytest.approx(0.0)

    def test_cash_shift_scales_value(self):
        rng = np.random.default_rng(15)
        rows = np.hstack([rng.uniform(-1, 1, size=(5, 1)), np.full((5, 1), -1.0)])
        program = make_exp_program(
            rows, rng.uniform(-1, 1, size=5), np.full(5, 0.2), 0.9,
            lower=[-1, -np.inf], upper=[1, np.inf], start=[0, 0],
        )
        y = np.array([0.3, 0.1])
        v0, _ = objective_and_gradient(program, y)
        v1, _ = objective_and_gradient(program, y + np.array([0.0, 2.0]))
        assert v1 == pytest.approx(v0 * np.exp(-0.9 * 2.0), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(400 + seed)
        program = random_exp_instance(rng, 3, 7)
        y = rng.uniform(-0.5, 0.5, size=3)
        _, grad = objective_and_gradient(program, y)
        for j in range( 3):
            h = 1e-5 * (1.0 + abs(y[j]))
            e = np.zeros(3)
            e[j] = h
            up, _ = objective_and_gradient(program, y + e)
            dn, _ = objective_and_gradient(program, y - e)
            fd = (up - dn) / (2.0 * h)
            assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-10)

    def test_large_exponent_guard(self):
        program = make_exp_program(
            rows=[[-1.0]], offsets=[0.0], masses=[1.0], kappa=1.0,
            lower=[-np.inf], upper=[np.inf], start=[0.0],
        )
        value, grad = objective_and_gradient(program, np.array([-750.0]))
        assert np.isinf(value)
        value2, grad2 = objective_and_gradient(program, np.array([-650.0]))
        assert np.isfinite(value2) and np.isfinite(grad2[0])
