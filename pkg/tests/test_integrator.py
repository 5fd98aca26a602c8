"""Poisson initialization, stepping, domain expansion, fast-grid construction."""

import io
import math

import numpy as np
import pytest

import hmesolver as h
from hmesolver.errors import ConfigError, NumericalInstabilityError

from conftest import example_network


def test_init_single_point_domain(paper_decomp):
    dom = h.build_initial_domain(paper_decomp, (30,), (30,), (0,), (0,))
    field = h.init_poisson(dom, h.SolverConfig(tau=1.0))
    assert field.marginal_of((0,)) == 1.0
    assert field.mean_of((0,)) == (0.0,)
    assert field.central_of((0,), (2,)) == 0.0


def test_init_matches_direct_summation_oracle(paper_decomp, paper_domain0):
    lam = 1.0
    cfg = h.SolverConfig(tau=1.0, poisson_mean_d=lam, poisson_mean_c=lam)
    field = h.init_poisson(paper_domain0, cfg)
    # independent oracle: enumerate the joint lattice weights directly
    weights = {}
    for d in range(9):
        for c in range(9):
            if 50 - 2 * d + c >= 0 and 2 * d - c >= 0:
                weights[(d, c)] = math.exp(-2 * lam) * lam**d / math.factorial(d) * lam**c / math.factorial(c)
    total = sum(weights.values())
    assert abs(sum(field.marginal) - 1.0) <= 1e-12
    for d in range(9):
        row = {c: w / total for (dd, c), w in weights.items() if dd == d}
        p_d = sum(row.values())
        mean = sum(c * w for c, w in row.items()) / p_d
        var = sum((c - mean) ** 2 * w for c, w in row.items()) / p_d
        assert field.marginal_of((d,)) == pytest.approx(p_d, abs=1e-14)
        assert field.mean_of((d,))[0] == pytest.approx(mean, abs=1e-12)
        assert field.central_of((d,), (2,)) == pytest.approx(var, abs=1e-12)
        assert field.central_of((d,), (2,)) >= 0.0


def test_step_zero_rates_leaves_field_unchanged():
    net = h.ReactionNetwork(
        2,
        (50.0, 0.0),
        (
            h.Reaction(0.0, (1, 0), (-2, 2), h.Tier.SLOW),
            h.Reaction(0.0, (0, 1), (1, -1), h.Tier.FAST),
        ),
    )
    dec = h.decompose_propensity(net)
    dom = h.build_initial_domain(dec, (30,), (30,), (4,), (4,))
    cfg = h.SolverConfig(tau=1.0, delta=1e-3)
    field = h.init_poisson(dom, cfg)
    after = h.step(field, dom, net, dec, cfg)
    assert after.marginal == field.marginal
    assert after.cond_mean == field.cond_mean
    assert after.cond_central == field.cond_central


def test_single_euler_step_matches_hand_update(paper_network, paper_decomp, paper_domain0):
    cfg = h.SolverConfig(tau=1.0, delta=1e-4, poisson_mean_d=1.0, poisson_mean_c=1.0)
    field = h.init_poisson(paper_domain0, cfg)
    after = h.step(field, paper_domain0, paper_network, paper_decomp, cfg)
    for d in field.slow_states:
        rhs = h.marginal_rhs(paper_network, paper_decomp, field, d)
        assert after.marginal_of(d) == pytest.approx(
            field.marginal_of(d) + cfg.delta * rhs, abs=1e-15
        )


def test_step_richardson_order(paper_network, paper_decomp, paper_domain0):
    """Halving the step size shrinks the two-half-steps-vs-one gap ~4x."""
    base = h.init_poisson(
        paper_domain0, h.SolverConfig(tau=1.0, poisson_mean_d=1.0, poisson_mean_c=1.0)
    )

    def gap(delta):
        cfg_full = h.SolverConfig(tau=1.0, delta=delta)
        cfg_half = h.SolverConfig(tau=1.0, delta=delta / 2)
        one = h.step(base, paper_domain0, paper_network, paper_decomp, cfg_full)
        two = h.step(base, paper_domain0, paper_network, paper_decomp, cfg_half)
        two = h.step(two, paper_domain0, paper_network, paper_decomp, cfg_half)
        return max(abs(a - b) for a, b in zip(one.marginal, two.marginal))

    g1, g2 = gap(1e-3), gap(5e-4)
    assert g1 / g2 == pytest.approx(4.0, rel=0.35)


def test_step_detects_instability(paper_network, paper_decomp, paper_domain0):
    cfg = h.SolverConfig(tau=1.0, delta=1e30)
    field = h.init_poisson(paper_domain0, cfg)
    with pytest.raises(NumericalInstabilityError):
        for _ in range(4):
            field = h.step(field, paper_domain0, paper_network, paper_decomp, cfg)


def test_expand_below_threshold_is_noop(paper_decomp):
    dom = h.build_initial_domain(paper_decomp, (30,), (30,), (1,), (8,))
    cfg = h.SolverConfig(tau=1.0, epsilon_expand=1e-6)
    field = h.MomentField(
        ((0,), (1,)), (1.0 - 1e-9, 1e-9), ((0.0,), (1.0,)), ((0.0,), (0.5,)), 1
    )
    out_field, out_dom = h.expand_slow_domain(field, dom, cfg, 1)
    assert out_field is field and out_dom is dom


def test_expand_paper_average_formula(paper_decomp):
    dom = h.build_initial_domain(paper_decomp, (30,), (30,), (1,), (8,))
    cfg = h.SolverConfig(
        tau=1.0, epsilon_expand=1e-6, expansion_mass_init=h.ExpansionMassInit.PAPER_AVERAGE
    )
    field = h.MomentField(((0,), (1,)), (0.7, 0.3), ((0.0,), (1.2,)), ((0.0,), (0.4,)), 1)
    out_field, out_dom = h.expand_slow_domain(field, dom, cfg, 7)
    assert out_dom.slow_states[-1] == (2,)
    assert out_field.marginal_of((2,)) == pytest.approx(1.0 / 3.0)
    assert out_field.mean_of((2,)) == field.mean_of((1,))
    assert out_field.central_of((2,), (2,)) == field.central_of((1,), (2,))
    assert out_dom.expansion_log == ((7, (2,)),)


def test_expand_fresh_mode_conserves_mass(paper_decomp):
    dom = h.build_initial_domain(paper_decomp, (30,), (30,), (1,), (8,))
    cfg = h.SolverConfig(tau=1.0, epsilon_expand=1e-6)
    field = h.MomentField(((0,), (1,)), (0.7, 0.3), ((0.0,), (1.2,)), ((0.0,), (0.4,)), 1)
    out_field, _ = h.expand_slow_domain(field, dom, cfg, 1)
    assert out_field.marginal_of((2,)) == 0.0
    assert sum(out_field.marginal) == pytest.approx(1.0)


def test_expand_renormalize_option(paper_decomp):
    dom = h.build_initial_domain(paper_decomp, (30,), (30,), (1,), (8,))
    cfg = h.SolverConfig(
        tau=1.0,
        expansion_mass_init=h.ExpansionMassInit.PAPER_AVERAGE,
        renormalize_on_expand=True,
    )
    field = h.MomentField(((0,), (1,)), (0.7, 0.3), ((0.0,), (1.2,)), ((0.0,), (0.4,)), 1)
    out_field, _ = h.expand_slow_domain(field, dom, cfg, 1)
    assert sum(out_field.marginal) == pytest.approx(1.0)


def test_expand_disabled_by_infinite_threshold(paper_decomp):
    dom = h.build_initial_domain(paper_decomp, (30,), (30,), (1,), (8,))
    cfg = h.SolverConfig(tau=1.0, epsilon_expand=float("inf"))
    field = h.MomentField(((0,), (1,)), (0.2, 0.8), ((0.0,), (1.0,)), ((0.0,), (0.5,)), 1)
    out_field, out_dom = h.expand_slow_domain(field, dom, cfg, 1)
    assert out_dom.slow_states == dom.slow_states


def test_build_fast_domain_without_expansion_keeps_rows(paper_decomp, paper_domain0):
    cfg = h.SolverConfig(tau=1.0)
    field = h.init_poisson(paper_domain0, cfg)
    dom = h.build_fast_domain(field, paper_domain0, cfg)
    assert dom.fast_grid == paper_domain0.fast_grid


def test_build_fast_domain_zero_sigma_clips_reference_bounds(paper_decomp, paper_domain0):
    cfg = h.SolverConfig(tau=1.0, epsilon_sigma=2.0)
    field = h.MomentField(
        paper_domain0.slow_states + ((9,),),
        tuple([0.1] * 9 + [0.1]),
        tuple([(1.0,)] * 9 + [(3.0,)]),
        tuple([(0.5,)] * 9 + [(0.0,)]),  # zero spread at the new state
        1,
    )
    dom = h.LatticeDomain(
        decomp=paper_domain0.decomp,
        slow_states=paper_domain0.slow_states + ((9,),),
        fast_grid=dict(paper_domain0.fast_grid),
        slow_caps=paper_domain0.slow_caps,
        fast_caps=paper_domain0.fast_caps,
        initial_slow_states=paper_domain0.initial_slow_states,
        c_ref_min=paper_domain0.c_ref_min,
        c_ref_max=paper_domain0.c_ref_max,
        expansion_log=((1, (9,)),),
    )
    out = h.build_fast_domain(field, dom, cfg)
    # reference bounds are [0, 8]; zero sigma keeps them; all feasible at d=9
    assert out.fast_grid[(9,)] == tuple((c,) for c in range(9))


def test_build_fast_domain_inflates_by_sigma(paper_decomp, paper_domain0):
    cfg = h.SolverConfig(tau=1.0, epsilon_sigma=2.0)
    field = h.MomentField(
        paper_domain0.slow_states + ((9,),),
        tuple([0.1] * 9 + [0.1]),
        tuple([(1.0,)] * 9 + [(3.0,)]),
        tuple([(0.5,)] * 9 + [(2.25,)]),  # sigma 1.5 -> +-3 around [0, 8]
        1,
    )
    dom = h.LatticeDomain(
        decomp=paper_domain0.decomp,
        slow_states=paper_domain0.slow_states + ((9,),),
        fast_grid=dict(paper_domain0.fast_grid),
        slow_caps=paper_domain0.slow_caps,
        fast_caps=paper_domain0.fast_caps,
        initial_slow_states=paper_domain0.initial_slow_states,
        c_ref_min=paper_domain0.c_ref_min,
        c_ref_max=paper_domain0.c_ref_max,
    )
    out = h.build_fast_domain(field, dom, cfg)
    assert out.fast_grid[(9,)] == tuple((c,) for c in range(12))  # [max(0,-3), 11]
    for c in out.fast_grid[(9,)]:
        assert paper_decomp.feasible((9,), c)


def test_run_single_step_equals_manual_composition(paper_network, paper_decomp, paper_domain0):
    cfg = h.SolverConfig(tau=1e-4, delta=1e-4, poisson_mean_d=0.5, poisson_mean_c=0.5)
    field, dom = h.run_to_time(paper_network, cfg, paper_domain0)
    manual = h.init_poisson(paper_domain0, cfg)
    manual = h.step(manual, paper_domain0, paper_network, paper_decomp, cfg)
    manual, mdom = h.expand_slow_domain(manual, paper_domain0, cfg, 1)
    mdom = h.build_fast_domain(manual, mdom, cfg)
    assert field.marginal == manual.marginal
    assert field.cond_mean == manual.cond_mean
    assert field.cond_central == manual.cond_central
    assert dom.slow_states == mdom.slow_states


def test_run_is_deterministic(paper_network, paper_domain0):
    cfg = h.SolverConfig(tau=0.02, delta=1e-4, poisson_mean_d=0.5, poisson_mean_c=0.5)
    f1, d1 = h.run_to_time(paper_network, cfg, paper_domain0)
    f2, d2 = h.run_to_time(paper_network, cfg, paper_domain0)
    assert f1.marginal == f2.marginal
    assert f1.cond_mean == f2.cond_mean
    assert f1.cond_central == f2.cond_central
    assert d1.slow_states == d2.slow_states
    assert d1.expansion_log == d2.expansion_log


def test_run_domain_growth_is_monotone_and_feasible(paper_network, paper_domain0):
    sizes = []
    diag = io.StringIO()
    cfg = h.SolverConfig(tau=0.05, delta=1e-4, poisson_mean_d=0.5, poisson_mean_c=0.5)
    field, dom = h.run_to_time(paper_network, cfg, paper_domain0, diagnostics=diag)
    lines = diag.getvalue().strip().splitlines()
    assert lines[0] == "step,total_mass,domain_size,clamp_events"
    assert len(lines) == cfg.step_count + 1
    sizes = [int(line.split(",")[2]) for line in lines[1:]]
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))
    for d, c in dom.points():
        assert dom.feasible(d, c)
        assert dom.within_caps(d, c)


def test_run_short_horizon_mass_conservation(paper_network, paper_domain0):
    cfg = h.SolverConfig(tau=0.2, delta=1e-4, poisson_mean_d=0.5, poisson_mean_c=0.5)
    field, _ = h.run_to_time(paper_network, cfg, paper_domain0)
    assert 0.999 <= field.total_mass() <= 1.0


def test_run_rejects_multi_slow_expansion():
    net = h.ReactionNetwork(
        2,
        (10.0, 10.0),
        (
            h.Reaction(0.1, (1, 0), (-1, 0), h.Tier.SLOW),
            h.Reaction(0.1, (0, 1), (0, -1), h.Tier.SLOW),
            h.Reaction(0.4, (0, 1), (1, -1), h.Tier.FAST),
        ),
    )
    dec = h.decompose_propensity(net)
    dom = h.build_initial_domain(dec, (5, 5), (10,), (2, 2), (2,))
    with pytest.raises(ConfigError):
        h.run_to_time(net, h.SolverConfig(tau=0.01, delta=1e-3), dom)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        h.SolverConfig(tau=0.0)
    with pytest.raises(ConfigError):
        h.SolverConfig(tau=1.0, delta=-1e-4)
    with pytest.raises(ConfigError):
        h.SolverConfig(tau=1.0, delta=3e-4)  # not an integral number of steps
    assert h.SolverConfig(tau=1.0, delta=1e-4).step_count == 10000
