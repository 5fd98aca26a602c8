"""Reaction networks over counting coordinates.

A network is described by species counts and a list of reactions split into a
slow tier (kept as a Markov jump process) and a fast tier (treated as a
diffusion).  The state of the system is tracked through reaction counters: a
vector ``d`` counting slow firings and a vector ``c`` counting fast firings.
Species counts are reconstructed from the counters, which yields the
decomposition of every propensity into a slow-dependent part and a
fast-dependent part.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import InfeasibleStateError

_FEAS_TOL = 1e-9


class Tier(enum.Enum):
    SLOW = "slow"
    FAST = "fast"


class Kinetics(enum.Enum):
    """How reactant orders turn into a rate law.

    POWER_LAW evaluates ``rate * prod(x_s ** order_s)`` on the reconstructed
    species counts; COMBINATORIAL uses falling-factorial binomials
    ``rate * prod(C(x_s, order_s))`` as in mass-action counting kinetics.
    """

    POWER_LAW = "power-law"
    COMBINATORIAL = "combinatorial"


@dataclass(frozen=True)
class Reaction:
    """One reaction channel.

    ``reactant_orders`` are the kinetic exponents entering the propensity;
    they may differ from the stoichiometric reactant counts (linear rate laws
    on multi-molecule reactions are allowed).  ``stoichiometry`` is the net
    species change per firing.
    """

    rate_constant: float
    reactant_orders: tuple[int, ...]
    stoichiometry: tuple[int, ...]
    tier: Tier
    kinetics_form: Kinetics = Kinetics.POWER_LAW
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "reactant_orders", tuple(int(r) for r in self.reactant_orders))
        object.__setattr__(self, "stoichiometry", tuple(int(s) for s in self.stoichiometry))


@dataclass(frozen=True)
class ReactionNetwork:
    """A well-mixed reaction system over counting coordinates.

    All values are immutable after construction; instances are safe to share
    across threads.
    """

    species_count: int
    initial_state: tuple[float, ...]
    reactions: tuple[Reaction, ...]
    species_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "initial_state", tuple(float(y) for y in self.initial_state))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        if not self.species_names:
            object.__setattr__(
                self, "species_names", tuple(f"S{i + 1}" for i in range(self.species_count))
            )

    @property
    def slow_indices(self) -> tuple[int, ...]:
        return tuple(k for k, r in enumerate(self.reactions) if r.tier is Tier.SLOW)

    @property
    def fast_indices(self) -> tuple[int, ...]:
        return tuple(k for k, r in enumerate(self.reactions) if r.tier is Tier.FAST)

    @property
    def slow_count(self) -> int:
        return len(self.slow_indices)

    @property
    def fast_count(self) -> int:
        return len(self.fast_indices)


def validate_network(net: ReactionNetwork, hybrid: bool = True) -> list[str]:
    """Collect all invariant violations of ``net``; empty list means well-formed.

    Violations are data, not failures: callers decide whether to abort.
    ``hybrid`` requires both a slow and a fast tier to be populated.
    """
    violations: list[str] = []
    if net.species_count < 1:
        violations.append("species_count must be positive")
    if len(net.initial_state) != net.species_count:
        violations.append(
            f"initial_state has length {len(net.initial_state)}, expected {net.species_count}"
        )
    for s, y in enumerate(net.initial_state):
        if y < 0:
            violations.append(f"negative initial count for species index {s}")
    if not net.reactions:
        violations.append("network has no reactions")
    for k, rxn in enumerate(net.reactions):
        label = rxn.name or f"reaction {k}"
        if not rxn.rate_constant > 0:
            violations.append(f"nonpositive rate constant in {label}")
        if len(rxn.reactant_orders) != net.species_count:
            violations.append(f"reactant_orders length mismatch in {label}")
        if len(rxn.stoichiometry) != net.species_count:
            violations.append(f"stoichiometry length mismatch in {label}")
        if any(r < 0 for r in rxn.reactant_orders):
            violations.append(f"negative reactant order in {label}")
        if rxn.kinetics_form is Kinetics.COMBINATORIAL and any(
            v + r < 0 for v, r in zip(rxn.stoichiometry, rxn.reactant_orders)
        ):
            # under mass-action counting, products = stoichiometry + reactants >= 0
            violations.append(f"stoichiometry inconsistent with reactant orders in {label}")
    if hybrid:
        if not net.slow_indices:
            violations.append("empty slow tier under hybrid mode")
        if not net.fast_indices:
            violations.append("empty fast tier under hybrid mode")
    return violations


@dataclass(frozen=True)
class PropensityDecomposition:
    """Split of reconstructed species counts into slow- and fast-counter parts.

    ``slow_part(d)[s] = y_s(0) + sum_i d_i * mu_si`` over slow reactions and
    ``fast_part(c)[s] = sum_j c_j * mu_sj`` over fast reactions, so the species
    count at counters ``(d, c)`` is ``slow_part(d) + fast_part(c)``.  The
    feasible domain is exactly where that sum is nonnegative.  Pure and
    deterministic: identical inputs give identical tables.
    """

    initial_state: tuple[float, ...]
    slow_stoich: tuple[tuple[int, ...], ...]  # [i][s] for slow reaction i
    fast_stoich: tuple[tuple[int, ...], ...]  # [j][s] for fast reaction j
    species_count: int

    def slow_part(self, d) -> tuple[float, ...]:
        d = _as_state(d, len(self.slow_stoich))
        out = list(self.initial_state)
        for i, di in enumerate(d):
            if di:
                col = self.slow_stoich[i]
                for s in range(self.species_count):
                    out[s] += di * col[s]
        return tuple(out)

    def fast_part(self, c) -> tuple[float, ...]:
        c = _as_state(c, len(self.fast_stoich))
        out = [0.0] * self.species_count
        for j, cj in enumerate(c):
            if cj:
                col = self.fast_stoich[j]
                for s in range(self.species_count):
                    out[s] += cj * col[s]
        return tuple(out)

    def species_at(self, d, c) -> tuple[float, ...]:
        b = self.slow_part(d)
        g = self.fast_part(c)
        return tuple(bs + gs for bs, gs in zip(b, g))

    def feasible(self, d, c) -> bool:
        return all(x >= -_FEAS_TOL for x in self.species_at(d, c))


def decompose_propensity(net: ReactionNetwork) -> PropensityDecomposition:
    """Build the slow/fast species-count decomposition for ``net``."""
    slow_cols = tuple(net.reactions[k].stoichiometry for k in net.slow_indices)
    fast_cols = tuple(net.reactions[k].stoichiometry for k in net.fast_indices)
    return PropensityDecomposition(
        initial_state=net.initial_state,
        slow_stoich=slow_cols,
        fast_stoich=fast_cols,
        species_count=net.species_count,
    )


def propensity(
    net: ReactionNetwork, decomp: PropensityDecomposition, k: int, d, c
) -> float:
    """Evaluate reaction ``k``'s rate at counters ``(d, c)``.

    Raises InfeasibleStateError if a species entering the rate law is negative.
    """
    rxn = net.reactions[k]
    x = decomp.species_at(d, c)
    out = rxn.rate_constant
    for s, order in enumerate(rxn.reactant_orders):
        if order == 0:
            continue
        base = x[s]
        if base < -_FEAS_TOL:
            raise InfeasibleStateError(
                f"species index {s} reconstructs to {base} at counters d={d}, c={c}"
            )
        if rxn.kinetics_form is Kinetics.POWER_LAW:
            out *= base**order
        else:
            out *= _falling_binomial(base, order)
    return out


def _falling_binomial(x: float, r: int) -> float:
    """Generalized binomial C(x, r) = x (x-1) ... (x-r+1) / r! for real x."""
    prod = 1.0
    for t in range(r):
        prod *= x - t
    return prod / math.factorial(r)


def _as_state(value, length: int) -> tuple:
    """Canonicalize a counter state to a tuple of the expected length."""
    if isinstance(value, tuple):
        state = value
    elif isinstance(value, (int, float)):
        state = (value,)
    else:
        state = tuple(value)
    if len(state) != length:
        raise ValueError(f"counter state {state!r} has length {len(state)}, expected {length}")
    return state
