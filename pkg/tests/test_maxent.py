"""Dual Newton maxent solver, problem assembly, joint reconstruction."""

import math

import numpy as np
import pytest

import hmesolver as h
from hmesolver.errors import DegenerateGridError, InfeasibleMomentsError


def scalar_problem(grid_values, constraints):
    return h.MaxEntProblem(
        grid=tuple((c,) for c in grid_values),
        constraints=tuple((tuple(m), s) for m, s in constraints),
    )


class TestDualSolve:
    def test_one_point_support(self):
        sol = h.dual_solve(scalar_problem([5], [((0,), 1.0)]))
        assert sol.density == {(5,): 1.0}
        assert sol.residual == 0.0

    def test_symmetric_two_point(self):
        sol = h.dual_solve(scalar_problem([0, 1], [((0,), 1.0), ((1,), 0.5)]))
        assert sol.density[(0,)] == pytest.approx(0.5, abs=1e-12)
        assert sol.density[(1,)] == pytest.approx(0.5, abs=1e-12)
        assert sol.multipliers[1] == pytest.approx(0.0, abs=1e-8)

    def test_gaussian_family_recovery(self):
        sol = h.dual_solve(
            scalar_problem(range(31), [((0,), 1.0), ((1,), 10.0), ((2,), 104.0)])
        )
        ref = {(c,): math.exp(-((c - 10.0) ** 2) / 8.0) for c in range(31)}
        z = sum(ref.values())
        tv = 0.5 * sum(abs(sol.density[(c,)] - ref[(c,)] / z) for c in range(31))
        assert tv <= 1e-3
        assert sol.iterations <= 50
        assert sol.residual <= 1e-8

    def test_moment_matching_within_tolerance(self):
        sol = h.dual_solve(
            scalar_problem(range(12), [((0,), 1.0), ((1,), 4.0), ((2,), 18.5)]), tol=1e-8
        )
        mom = h.moments_of(sol.density, [(1,), (2,)])
        assert abs(mom[0] - 4.0) <= 1e-8
        assert abs(mom[1] - 18.5) <= 1e-8

    def test_dual_objective_monotone_on_accepted_steps(self):
        trace: list = []
        h.dual_solve(
            scalar_problem(range(12), [((0,), 1.0), ((1,), 4.0), ((2,), 18.5)]), trace=trace
        )
        assert len(trace) >= 2
        for a, b in zip(trace, trace[1:]):
            assert b <= a + 1e-10

    def test_infeasible_mean_raises(self):
        with pytest.raises(InfeasibleMomentsError):
            h.dual_solve(scalar_problem([0, 1, 2], [((0,), 1.0), ((1,), 5.0)]))

    def test_degenerate_variance_two_point_fallback(self):
        sol = h.dual_solve(
            scalar_problem(range(6), [((0,), 1.0), ((1,), 2.25), ((2,), 2.25**2)])
        )
        assert sol.fallback == "two-point"
        mom = h.moments_of(sol.density, [(1,)])
        assert mom[0] == pytest.approx(2.25, abs=1e-12)
        assert sol.density[(2,)] == pytest.approx(0.75)
        assert sol.density[(3,)] == pytest.approx(0.25)

    def test_degenerate_multicoordinate_grid_raises(self):
        problem = h.MaxEntProblem(
            grid=((0, 0), (1, 0), (0, 1)),
            constraints=(
                ((0, 0), 1.0),
                ((1, 0), 0.5),
                ((0, 1), 0.5),
                ((2, 0), 0.25),
            ),
        )
        with pytest.raises(DegenerateGridError):
            h.dual_solve(problem)

    def test_entropy_beats_random_same_moment_densities(self):
        rng = np.random.default_rng(5)
        problem = scalar_problem(range(6), [((0,), 1.0), ((1,), 2.0), ((2,), 5.1)])
        sol = h.dual_solve(problem)
        p_star = np.array([sol.density[(c,)] for c in range(6)])
        feats = np.array([[1.0, c, c * c] for c in range(6)])
        # random feasible densities with identical moments via null-space moves
        _, _, vt = np.linalg.svd(feats.T, full_matrices=True)
        null = vt[3:]
        best = h.entropy(sol.density)
        for _ in range(100):
            z = null.T @ rng.normal(size=null.shape[0])
            scale = np.inf
            for qi, zi in zip(p_star, z):
                if zi < 0:
                    scale = min(scale, -qi / zi)
            q = p_star + 0.9 * rng.uniform() * min(scale, 1.0) * z
            q = np.maximum(q, 0.0)
            assert np.allclose(feats.T @ q, feats.T @ p_star, atol=1e-10)
            ent_q = -sum(x * math.log(x) for x in q if x > 0)
            assert best >= ent_q - 1e-9

    def test_log_density_is_exact_feature_polynomial(self):
        sol = h.dual_solve(
            scalar_problem(range(9), [((0,), 1.0), ((1,), 3.0), ((2,), 11.0)])
        )
        logp = np.array([math.log(sol.density[(c,)]) for c in range(9)])
        basis = np.array([[1.0, c, c * c] for c in range(9)])
        coef, *_ = np.linalg.lstsq(basis, logp, rcond=None)
        assert np.abs(basis @ coef - logp).max() <= 1e-9
        # the fitted coefficients are the (negated) multipliers
        assert coef[1] == pytest.approx(-sol.multipliers[1], abs=1e-7)
        assert coef[2] == pytest.approx(-sol.multipliers[2], abs=1e-7)


class TestMomentsOf:
    def test_normalization_index(self):
        dens = {(0,): 0.25, (1,): 0.75}
        assert h.moments_of(dens, [(0,)])[0] == pytest.approx(1.0)

    def test_symmetric_two_point_mean(self):
        dens = {(0,): 0.5, (2,): 0.5}
        assert h.moments_of(dens, [(1,)])[0] == pytest.approx(1.0)

    def test_second_raw_moment(self):
        dens = {(0,): 0.5, (2,): 0.5}
        assert h.moments_of(dens, [(2,)])[0] == pytest.approx(2.0)


class TestConditionalProblems:
    def test_raw_moment_targets_from_tracked_values(self, paper_decomp):
        # brute-force check: {2: 1/4, 4: 1/2, 6: 1/4} has mean 4, variance 2,
        # raw second moment 18
        pts = np.array([2.0, 4.0, 6.0])
        wts = np.array([0.25, 0.5, 0.25])
        assert wts @ pts == 4.0 and wts @ (pts - 4.0) ** 2 == 2.0 and wts @ pts**2 == 18.0
        dom = h.build_initial_domain(paper_decomp, (30,), (30,), (3,), (8,))
        field = h.MomentField(
            dom.slow_states,
            (0.25, 0.25, 0.25, 0.25),
            ((0.0,), (1.0,), (2.0,), (4.0,)),
            ((0.0,), (0.5,), (1.0,), (2.0,)),
            1,
        )
        problems = dict(h.conditional_problems(field, dom))
        constraints = dict(problems[(3,)].constraints)
        assert constraints[(0,)] == 1.0
        assert constraints[(1,)] == 4.0
        assert constraints[(2,)] == 18.0

    def test_below_floor_degrades_to_one_point(self, paper_decomp):
        dom = h.build_initial_domain(paper_decomp, (30,), (30,), (2,), (8,))
        field = h.MomentField(
            dom.slow_states,
            (0.5, 0.5, 1e-15),
            ((0.0,), (1.0,), (3.2,)),
            ((0.0,), (0.5,), (1.0,)),
            1,
        )
        problems = dict(h.conditional_problems(field, dom, mass_floor=1e-12))
        assert problems[(2,)].grid == ((3,),)  # nearest grid point to the frozen mean
        assert problems[(2,)].constraints == (((0,), 1.0),)

    def test_empty_grid_excluded_with_warning(self, paper_decomp, paper_domain0):
        from dataclasses import replace

        dom = replace(
            paper_domain0,
            slow_states=paper_domain0.slow_states + ((9,),),
            fast_grid={**paper_domain0.fast_grid, (9,): ()},
        )
        field = h.MomentField(
            dom.slow_states,
            tuple([0.1] * 10),
            tuple([(1.0,)] * 10),
            tuple([(0.5,)] * 10),
            1,
        )
        warnings: list = []
        problems = h.conditional_problems(field, dom, warnings=warnings)
        assert (9,) not in dict(problems)
        assert len(warnings) == 1 and warnings[0].slow_state == (9,)


class TestAssembleJoint:
    def test_single_state_joint_equals_conditional(self):
        sol = h.dual_solve(scalar_problem([0, 1], [((0,), 1.0), ((1,), 0.5)]))
        field = h.MomentField(((0,),), (1.0,), ((0.5,),), ((0.25,),), 1)
        joint = h.assemble_joint([((0,), sol)], field, tau=0.1)
        assert joint.mass[((0,), (0,))] == pytest.approx(0.5)
        assert joint.mass[((0,), (1,))] == pytest.approx(0.5)
        assert joint.time == 0.1

    def test_two_state_product(self):
        uniform = h.dual_solve(scalar_problem([0, 1], [((0,), 1.0), ((1,), 0.5)]))
        field = h.MomentField(
            ((0,), (1,)), (0.4, 0.6), ((0.5,), (0.5,)), ((0.25,), (0.25,)), 1
        )
        joint = h.assemble_joint([((0,), uniform), ((1,), uniform)], field, tau=1.0)
        expected = {
            ((0,), (0,)): 0.2,
            ((0,), (1,)): 0.2,
            ((1,), (0,)): 0.3,
            ((1,), (1,)): 0.3,
        }
        for key, val in expected.items():
            assert joint.mass[key] == pytest.approx(val)
        assert joint.total_mass() == pytest.approx(1.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        h.MaxEntProblem(grid=(), constraints=(((0,), 1.0),))
    with pytest.raises(ValueError):
        h.MaxEntProblem(grid=((0,), (0,)), constraints=(((0,), 1.0),))
    with pytest.raises(ValueError):
        h.MaxEntProblem(grid=((0,), (1,)), constraints=(((1,), 0.5),))
    with pytest.raises(ValueError):
        # implied variance -1.75 < 0
        h.MaxEntProblem(
            grid=((0,), (1,), (2,)),
            constraints=(((0,), 1.0), ((1,), 1.5), ((2,), 0.5)),
        )
