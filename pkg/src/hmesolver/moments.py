"""Right-hand sides of the coupled conditional-moment ODE system.

The solver tracks, per slow counter state ``d``: the marginal probability
``p(d)``, the conditional means ``E[C_m | d]`` of the fast counters, and the
centered second conditional moments ``E[(C - E[C|d])^M | d]`` with ``|M| = 2``.
Third and higher central moments are closed to zero by default.

Expectations of propensities under the conditional law are closed by a
second-order Taylor expansion around the conditional mean.  Expectations
conditioned on a neighbor state ``d - e_i`` are reduced to neighbor-centered
moments through a binomial shift by the difference of conditional means.

All evaluators are pure with respect to the field: they read, never mutate.
Evaluations across slow states are independent and may run in parallel on an
immutable field snapshot.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

from .errors import MassFloorError, MissingNeighborError, UnsupportedOrderError
from .network import Kinetics, PropensityDecomposition, ReactionNetwork, _as_state

DEFAULT_MASS_FLOOR = 1e-12


@dataclass(frozen=True)
class ClosureConfig:
    """How the conditional-moment hierarchy is truncated.

    With ``truncate_above`` set, every central moment of total order above
    ``max_central_order`` is treated as zero.
    """

    max_central_order: int = 2
    truncate_above: bool = True

    def __post_init__(self):
        if self.max_central_order < 2:
            raise ValueError("max_central_order must be at least 2")


DEFAULT_CLOSURE = ClosureConfig()


def second_order_indices(fast_count: int) -> tuple[tuple[int, ...], ...]:
    """Multi-indices of total order 2 over ``fast_count`` coordinates, (k,l) with k<=l."""
    out = []
    for k in range(fast_count):
        for l in range(k, fast_count):
            m = [0] * fast_count
            m[k] += 1
            m[l] += 1
            out.append(tuple(m))
    return tuple(out)


@dataclass(frozen=True)
class MomentField:
    """Snapshot of the tracked state: marginals plus conditional moments.

    ``cond_central`` rows follow the ordering of ``second_order_indices``.
    ``higher_central`` optionally stores central moments of order three and
    above for closures that do not truncate them; entries default to zero.
    Instances are immutable values; integration steps build new ones.
    """

    slow_states: tuple[tuple[int, ...], ...]
    marginal: tuple[float, ...]
    cond_mean: tuple[tuple[float, ...], ...]
    cond_central: tuple[tuple[float, ...], ...]
    fast_count: int
    higher_central: Mapping = dc_field(default_factory=dict)
    _index: dict = dc_field(init=False, repr=False, compare=False)
    _pair_pos: dict = dc_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        states = tuple(tuple(int(x) for x in d) for d in self.slow_states)
        object.__setattr__(self, "slow_states", states)
        object.__setattr__(self, "marginal", tuple(float(x) for x in self.marginal))
        object.__setattr__(
            self, "cond_mean", tuple(tuple(float(x) for x in row) for row in self.cond_mean)
        )
        object.__setattr__(
            self, "cond_central", tuple(tuple(float(x) for x in row) for row in self.cond_central)
        )
        object.__setattr__(self, "_index", {d: i for i, d in enumerate(states)})
        object.__setattr__(
            self,
            "_pair_pos",
            {m: pos for pos, m in enumerate(second_order_indices(self.fast_count))},
        )

    @property
    def slow_dim(self) -> int:
        return len(self.slow_states[0]) if self.slow_states else 0

    def has(self, d) -> bool:
        return _as_state(d, self.slow_dim) in self._index

    def index_of(self, d) -> int:
        return self._index[_as_state(d, self.slow_dim)]

    def marginal_of(self, d) -> float:
        return self.marginal[self.index_of(d)]

    def mean_of(self, d) -> tuple[float, ...]:
        return self.cond_mean[self.index_of(d)]

    def central_of(self, d, midx) -> float:
        """Stored centered conditional moment for a total-order-2 multi-index."""
        return self.cond_central[self.index_of(d)][self._pair_pos[tuple(midx)]]

    def total_mass(self) -> float:
        return sum(self.marginal)


def central_moment_value(
    field: MomentField, d, midx, closure: ClosureConfig = DEFAULT_CLOSURE
) -> float:
    """Centered conditional moment E[(C - E[C|d])^midx | d] under the closure.

    Order 0 is 1, order 1 is exactly 0, order 2 reads the tracked value, and
    higher orders come from the optional store or the truncation rule.
    """
    midx = tuple(midx)
    order = sum(midx)
    if order == 0:
        return 1.0
    if order == 1:
        return 0.0
    if order == 2:
        return field.central_of(d, midx)
    if order > closure.max_central_order and closure.truncate_above:
        return 0.0
    key = (_as_state(d, field.slow_dim), midx)
    return float(field.higher_central.get(key, 0.0))


def _fast_rows(decomp: PropensityDecomposition) -> tuple[tuple[int, ...], ...]:
    """Per-species fast stoichiometry rows: row[s][j] for fast reaction j."""
    fc = len(decomp.fast_stoich)
    return tuple(
        tuple(decomp.fast_stoich[j][s] for j in range(fc)) for s in range(decomp.species_count)
    )


def _gamma_at(decomp: PropensityDecomposition, s: int, point: Sequence[float]) -> float:
    return sum(cj * decomp.fast_stoich[j][s] for j, cj in enumerate(point))


def _add_units(midx: tuple[int, ...], *positions: int) -> tuple[int, ...]:
    out = list(midx)
    for j in positions:
        out[j] += 1
    return tuple(out)


def taylor_closed_expectation(
    decomp: PropensityDecomposition,
    s: int,
    power: int,
    d,
    field: MomentField,
    closure: ClosureConfig = DEFAULT_CLOSURE,
) -> float:
    """E[fast_part_s(C)^power | d], closed at second order around the mean.

    The fast part is linear in the counters, so the expansion is exact for
    powers 0 and 1 and needs only the tracked second central moments for
    power 2.  Powers above 2 drop genuinely nonzero higher-order terms and are
    only allowed when the closure truncates.
    """
    if power < 0:
        raise ValueError("power must be nonnegative")
    if power > 2 and not closure.truncate_above:
        raise UnsupportedOrderError(f"power {power} requires truncating closure")
    if power == 0:
        return 1.0
    m = field.mean_of(d)
    g = _gamma_at(decomp, s, m)
    if power == 1:
        return g
    fc = field.fast_count
    quad = 0.0
    for k in range(fc):
        mu_k = decomp.fast_stoich[k][s]
        if mu_k == 0:
            continue
        for l in range(fc):
            mu_l = decomp.fast_stoich[l][s]
            if mu_l == 0:
                continue
            quad += mu_k * mu_l * central_moment_value(field, d, _add_units((0,) * fc, k, l), closure)
    return g**power + 0.5 * power * (power - 1) * g ** (power - 2) * quad


def _weighted_gamma_expectation(
    decomp: PropensityDecomposition,
    s: int,
    power: int,
    weight: tuple[int, ...],
    d_ref,
    field: MomentField,
    closure: ClosureConfig,
) -> float:
    """E[(C - E[C|d_ref])^weight * fast_part_s(C)^power | d_ref], Taylor-closed."""
    fc = field.fast_count
    cm = lambda k: central_moment_value(field, d_ref, k, closure)
    if power == 0:
        return cm(weight)
    m = field.mean_of(d_ref)
    g = _gamma_at(decomp, s, m)
    total = g**power * cm(weight)
    for k in range(fc):
        mu_k = decomp.fast_stoich[k][s]
        if mu_k == 0:
            continue
        total += power * g ** (power - 1) * mu_k * cm(_add_units(weight, k))
        if power >= 2:
            for l in range(fc):
                mu_l = decomp.fast_stoich[l][s]
                if mu_l == 0:
                    continue
                total += (
                    0.5
                    * power
                    * (power - 1)
                    * g ** (power - 2)
                    * mu_k
                    * mu_l
                    * cm(_add_units(weight, k, l))
                )
    return total


def shifted_central_expectation(
    decomp: PropensityDecomposition,
    s: int,
    power: int,
    midx,
    d,
    d_prev,
    field: MomentField,
    closure: ClosureConfig = DEFAULT_CLOSURE,
) -> float:
    """E[(C - E[C|d])^midx * fast_part_s(C)^power | d_prev].

    The centering sits at the mean of ``d`` while the conditioning state is
    the neighbor ``d_prev``; the binomial identity rewrites everything in
    neighbor-centered moments shifted by the mean difference.
    """
    midx = tuple(midx)
    if not field.has(d_prev):
        raise MissingNeighborError(f"neighbor state {d_prev!r} absent from the field")
    m_here = field.mean_of(d)
    m_prev = field.mean_of(d_prev)
    delta = tuple(a - b for a, b in zip(m_prev, m_here))
    total = 0.0
    for sub in itertools.product(*(range(mj + 1) for mj in midx)):
        coeff = 1.0
        for mj, kj, dj in zip(midx, sub, delta):
            coeff *= math.comb(mj, kj) * dj ** (mj - kj)
        if coeff == 0.0:
            continue
        total += coeff * _weighted_gamma_expectation(decomp, s, power, sub, d_prev, field, closure)
    return total


def _species_poly_coeffs(form: Kinetics, beta_s: float, order: int) -> list[float]:
    """Coefficients a_n of the species rate factor as a polynomial sum a_n * g^n.

    Power-law: (beta + g)^order.  Combinatorial: falling-factorial binomial
    C(beta + g, order) expanded in g.
    """
    if form is Kinetics.POWER_LAW:
        return [math.comb(order, n) * beta_s ** (order - n) for n in range(order + 1)]
    coeffs = [1.0]
    for t in range(order):
        const = beta_s - t
        new = [0.0] * (len(coeffs) + 1)
        for p, a in enumerate(coeffs):
            new[p] += a * const
            new[p + 1] += a
        coeffs = new
    fact = math.factorial(order)
    return [a / fact for a in coeffs]


def _poly_eval_derivs(coeffs: Sequence[float], g: float) -> tuple[float, float, float]:
    """Value, first and second derivative of sum a_n g^n at g."""
    v0 = sum(a * g**n for n, a in enumerate(coeffs))
    v1 = sum(n * a * g ** (n - 1) for n, a in enumerate(coeffs) if n >= 1)
    v2 = sum(n * (n - 1) * a * g ** (n - 2) for n, a in enumerate(coeffs) if n >= 2)
    return v0, v1, v2


def expected_propensity(
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    k: int,
    slow_at,
    weight,
    d_ref,
    field: MomentField,
    closure: ClosureConfig = DEFAULT_CLOSURE,
    cache: dict | None = None,
) -> float:
    """E[(C - E[C|d_ref])^weight * propensity_k(slow_at, C) | d_ref].

    The propensity is the closed product over species factors evaluated at the
    slow counters ``slow_at``; its conditional expectation is closed by a
    second-order Taylor expansion around the conditional mean at ``d_ref``,
    which keeps cross-species covariance contributions.
    """
    weight = tuple(weight) if weight is not None else (0,) * field.fast_count
    slow_at = _as_state(slow_at, len(decomp.slow_stoich))
    d_ref = _as_state(d_ref, field.slow_dim)
    if cache is not None:
        key = (k, slow_at, weight, d_ref)
        hit = cache.get(key)
        if hit is not None:
            return hit
    rxn = net.reactions[k]
    fc = field.fast_count
    total_order = sum(rxn.reactant_orders)
    if total_order > 2 and not closure.truncate_above:
        raise UnsupportedOrderError(
            f"total reactant order {total_order} requires truncating closure"
        )
    cm = lambda key_idx: central_moment_value(field, d_ref, key_idx, closure)
    support = [s for s in range(net.species_count) if rxn.reactant_orders[s] > 0]
    if not support:
        result = rxn.rate_constant * cm(weight)
        if cache is not None:
            cache[key] = result
        return result

    beta = decomp.slow_part(slow_at)
    m_ref = field.mean_of(d_ref)
    gamma_ref = decomp.fast_part(m_ref)
    f0: list[float] = []
    f1: list[float] = []
    f2: list[float] = []
    for s in support:
        coeffs = _species_poly_coeffs(rxn.kinetics_form, beta[s], rxn.reactant_orders[s])
        v0, v1, v2 = _poly_eval_derivs(coeffs, gamma_ref[s])
        f0.append(v0)
        f1.append(v1)
        f2.append(v2)

    n_sup = len(support)

    def prod_except(skip=(),):
        prod = 1.0
        for idx in range(n_sup):
            if idx not in skip:
                prod *= f0[idx]
        return prod

    rate = rxn.rate_constant
    total = rate * prod_except() * cm(weight)
    # gradient terms over fast coordinates
    for j in range(fc):
        dP = 0.0
        for idx, s in enumerate(support):
            mu = decomp.fast_stoich[j][s]
            if mu and f1[idx]:
                dP += f1[idx] * mu * prod_except((idx,))
        if dP:
            total += rate * dP * cm(_add_units(weight, j))
    # second-derivative terms
    for j in range(fc):
        for l in range(fc):
            h = 0.0
            for idx, s in enumerate(support):
                mu_j = decomp.fast_stoich[j][s]
                mu_l = decomp.fast_stoich[l][s]
                if mu_j and mu_l and f2[idx]:
                    h += f2[idx] * mu_j * mu_l * prod_except((idx,))
            for idx, s in enumerate(support):
                mu_j = decomp.fast_stoich[j][s]
                if not (mu_j and f1[idx]):
                    continue
                for idx2, u in enumerate(support):
                    if idx2 == idx:
                        continue
                    mu_l = decomp.fast_stoich[l][u]
                    if mu_l and f1[idx2]:
                        h += f1[idx] * mu_j * f1[idx2] * mu_l * prod_except((idx, idx2))
            if h:
                total += 0.5 * rate * h * cm(_add_units(weight, j, l))
    if cache is not None:
        cache[key] = total
    return total


def _neighbor(d: tuple[int, ...], i: int) -> tuple[int, ...] | None:
    """Slow state one firing of slow reaction i earlier, or None below zero."""
    if d[i] == 0:
        return None
    out = list(d)
    out[i] -= 1
    return tuple(out)


def marginal_rhs(
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    field: MomentField,
    d,
    closure: ClosureConfig = DEFAULT_CLOSURE,
    cache: dict | None = None,
) -> float:
    """Time derivative of the marginal probability p(d).

    Sum over slow reactions of incoming flux from ``d - e_i`` minus outgoing
    flux from ``d``, with propensities replaced by their Taylor-closed
    conditional expectations.  Absent neighbor states contribute zero mass.
    """
    d = _as_state(d, field.slow_dim)
    zero_w = (0,) * field.fast_count
    total = 0.0
    for i, k in enumerate(net.slow_indices):
        p_d = field.marginal_of(d)
        if p_d != 0.0:
            total -= expected_propensity(net, decomp, k, d, zero_w, d, field, closure, cache) * p_d
        d_prev = _neighbor(d, i)
        if d_prev is not None and field.has(d_prev):
            p_prev = field.marginal_of(d_prev)
            if p_prev != 0.0:
                total += (
                    expected_propensity(net, decomp, k, d_prev, zero_w, d_prev, field, closure, cache)
                    * p_prev
                )
    return total


def cond_mean_rhs(
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    field: MomentField,
    d,
    m: int,
    mass_floor: float = DEFAULT_MASS_FLOOR,
    closure: ClosureConfig = DEFAULT_CLOSURE,
    marginal_rhs_value: float | None = None,
    cache: dict | None = None,
) -> float:
    """Time derivative of the conditional mean E[C_m | d].

    Expectations of ``C_m`` against a propensity are split into a centered
    part plus mean times plain expectation; neighbor terms center at the
    neighbor's own mean.  Includes the coupling through the marginal's rate of
    change.  Requires p(d) at or above the mass floor.
    """
    d = _as_state(d, field.slow_dim)
    p_d = field.marginal_of(d)
    if p_d < mass_floor:
        raise MassFloorError(f"marginal mass {p_d} below floor {mass_floor} at {d!r}")
    fc = field.fast_count
    zero_w = (0,) * fc
    e_m = _add_units(zero_w, m)
    mdot = (
        marginal_rhs_value
        if marginal_rhs_value is not None
        else marginal_rhs(net, decomp, field, d, closure, cache)
    )
    num = 0.0
    for i, k in enumerate(net.slow_indices):
        a_w = expected_propensity(net, decomp, k, d, e_m, d, field, closure, cache)
        a_0 = expected_propensity(net, decomp, k, d, zero_w, d, field, closure, cache)
        num -= (a_w + field.mean_of(d)[m] * a_0) * p_d
        d_prev = _neighbor(d, i)
        if d_prev is not None and field.has(d_prev):
            p_prev = field.marginal_of(d_prev)
            if p_prev != 0.0:
                a_wp = expected_propensity(net, decomp, k, d_prev, e_m, d_prev, field, closure, cache)
                a_0p = expected_propensity(net, decomp, k, d_prev, zero_w, d_prev, field, closure, cache)
                num += (a_wp + field.mean_of(d_prev)[m] * a_0p) * p_prev
    # drift source from the fast reaction whose counter this is
    k_fast = net.fast_indices[m]
    num += expected_propensity(net, decomp, k_fast, d, zero_w, d, field, closure, cache) * p_d
    num -= field.mean_of(d)[m] * mdot
    return num / p_d


def central_moment_rhs(
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    field: MomentField,
    d,
    midx,
    mean_rhs_cache: Sequence[float],
    mass_floor: float = DEFAULT_MASS_FLOOR,
    closure: ClosureConfig = DEFAULT_CLOSURE,
    marginal_rhs_value: float | None = None,
    cache: dict | None = None,
) -> float:
    """Time derivative of the centered conditional moment E[(C-E[C|d])^midx | d].

    Slow-jump terms re-center neighbor contributions with the binomial shift;
    fast reactions contribute drift (factor M_j) and diffusion (factor
    M_j (M_j - 1) / 2) terms; couplings subtract the already-computed mean
    derivatives and the marginal derivative.
    """
    d = _as_state(d, field.slow_dim)
    midx = tuple(midx)
    p_d = field.marginal_of(d)
    if p_d < mass_floor:
        raise MassFloorError(f"marginal mass {p_d} below floor {mass_floor} at {d!r}")
    fc = field.fast_count
    m_here = field.mean_of(d)
    mdot = (
        marginal_rhs_value
        if marginal_rhs_value is not None
        else marginal_rhs(net, decomp, field, d, closure, cache)
    )
    num = 0.0
    for i, k in enumerate(net.slow_indices):
        num -= expected_propensity(net, decomp, k, d, midx, d, field, closure, cache) * p_d
        d_prev = _neighbor(d, i)
        if d_prev is not None and field.has(d_prev):
            p_prev = field.marginal_of(d_prev)
            if p_prev != 0.0:
                m_prev = field.mean_of(d_prev)
                delta = tuple(a - b for a, b in zip(m_prev, m_here))
                gain = 0.0
                for sub in itertools.product(*(range(mj + 1) for mj in midx)):
                    coeff = 1.0
                    for mj, kj, dj in zip(midx, sub, delta):
                        coeff *= math.comb(mj, kj) * dj ** (mj - kj)
                    if coeff == 0.0:
                        continue
                    gain += coeff * expected_propensity(
                        net, decomp, k, d_prev, sub, d_prev, field, closure, cache
                    )
                num += gain * p_prev
    for j, k in enumerate(net.fast_indices):
        mj = midx[j]
        if mj >= 1:
            lowered = list(midx)
            lowered[j] -= 1
            num += (
                mj
                * expected_propensity(net, decomp, k, d, tuple(lowered), d, field, closure, cache)
                * p_d
            )
            num -= mj * central_moment_value(field, d, tuple(lowered), closure) * p_d * mean_rhs_cache[j]
        if mj >= 2:
            lowered2 = list(midx)
            lowered2[j] -= 2
            num += (
                0.5
                * mj
                * (mj - 1)
                * expected_propensity(net, decomp, k, d, tuple(lowered2), d, field, closure, cache)
                * p_d
            )
    num -= central_moment_value(field, d, midx, closure) * mdot
    return num / p_d
