"""Fixed-step integration of the moment system with adaptive slow-domain growth.

The slow-counter domain starts from a user-supplied initial box and is
extended one state at a time whenever the boundary marginal exceeds a
threshold.  After reaching the target time, a fast-counter grid is attached to
every newly added slow state from the tracked conditional spread, producing
the lattice on which conditional densities are reconstructed.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field as dc_field, replace

from .errors import ConfigError, EmptyDomainError, NumericalInstabilityError
from .moments import (
    DEFAULT_CLOSURE,
    DEFAULT_MASS_FLOOR,
    ClosureConfig,
    MomentField,
    central_moment_rhs,
    cond_mean_rhs,
    marginal_rhs,
    second_order_indices,
)
from .network import PropensityDecomposition, ReactionNetwork, _as_state


class Scheme(enum.Enum):
    EULER = "euler"
    RK4 = "rk4"


class ExpansionMassInit(enum.Enum):
    """How a freshly appended boundary state's marginal is initialized.

    FRESH starts the new state at zero mass and lets probability flux fill it,
    which preserves total mass.  PAPER_AVERAGE assigns the average of the
    current masses, sum(p)/(|D|+1); this inflates total mass and is kept only
    for fidelity studies (combine with renormalize_on_expand for hygiene).
    """

    FRESH = "fresh"
    PAPER_AVERAGE = "paper-average"


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping, domain growth, and initialization parameters."""

    tau: float
    delta: float = 1e-4
    epsilon_expand: float = 1e-6
    epsilon_sigma: float = 2.0
    poisson_mean_d: float = 1.0
    poisson_mean_c: float = 1.0
    scheme: Scheme = Scheme.EULER
    renormalize_on_expand: bool = False
    expansion_mass_init: ExpansionMassInit = ExpansionMassInit.FRESH
    mass_floor: float = DEFAULT_MASS_FLOOR

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        steps = self.tau / self.delta
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ConfigError(f"tau/delta = {steps} is not integral within rounding tolerance")

    @property
    def step_count(self) -> int:
        return int(round(self.tau / self.delta))


@dataclass(frozen=True)
class LatticeDomain:
    """The discrete feasible region: slow states plus per-state fast grids.

    ``slow_states`` only grows over a run; every stored point satisfies the
    feasibility predicate (all reconstructed species counts nonnegative) and
    the lattice caps.  ``expansion_log`` records (step index, new state).
    """

    decomp: PropensityDecomposition
    slow_states: tuple[tuple[int, ...], ...]
    fast_grid: dict  # d tuple -> tuple of c tuples
    slow_caps: tuple[int, ...]
    fast_caps: tuple[int, ...]
    initial_slow_states: tuple[tuple[int, ...], ...]
    c_ref_min: tuple[int, ...] = ()
    c_ref_max: tuple[int, ...] = ()
    expansion_log: tuple[tuple[int, tuple[int, ...]], ...] = ()

    @property
    def slow_dim(self) -> int:
        return len(self.slow_caps)

    @property
    def fast_dim(self) -> int:
        return len(self.fast_caps)

    def feasible(self, d, c) -> bool:
        """Feasibility predicate: nonnegative species reconstruction."""
        return self.decomp.feasible(d, c)

    def within_caps(self, d, c) -> bool:
        return all(0 <= di <= cap for di, cap in zip(d, self.slow_caps)) and all(
            0 <= cj <= cap for cj, cap in zip(c, self.fast_caps)
        )

    def points(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """All (d, c) lattice points currently in the domain, lexicographic."""
        out = []
        for d in self.slow_states:
            for c in self.fast_grid.get(d, ()):
                out.append((d, c))
        return out


def _box(caps: tuple[int, ...]):
    if not caps:
        return [()]
    return itertools.product(*(range(cap + 1) for cap in caps))


def full_feasible_lattice(
    decomp: PropensityDecomposition, slow_caps: tuple[int, ...], fast_caps: tuple[int, ...]
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All feasible (d, c) counting states inside the caps, lexicographic."""
    out = []
    for d in _box(slow_caps):
        for c in _box(fast_caps):
            if decomp.feasible(d, c):
                out.append((d, c))
    return out


def build_initial_domain(
    decomp: PropensityDecomposition,
    slow_caps: tuple[int, ...],
    fast_caps: tuple[int, ...],
    init_slow_caps: tuple[int, ...],
    init_fast_caps: tuple[int, ...],
) -> LatticeDomain:
    """Construct the starting domain: the initial box clipped to feasibility."""
    rows: dict = {}
    for d in _box(init_slow_caps):
        cs = tuple(c for c in _box(init_fast_caps) if decomp.feasible(d, c))
        if cs:
            rows[d] = cs
    if not rows:
        raise EmptyDomainError("initial domain box contains no feasible state")
    slow_states = tuple(sorted(rows))
    d_top = slow_states[-1]
    top_row = rows[d_top]
    fd = len(fast_caps)
    c_ref_min = tuple(min(c[j] for c in top_row) for j in range(fd))
    c_ref_max = tuple(max(c[j] for c in top_row) for j in range(fd))
    return LatticeDomain(
        decomp=decomp,
        slow_states=slow_states,
        fast_grid=rows,
        slow_caps=tuple(slow_caps),
        fast_caps=tuple(fast_caps),
        initial_slow_states=slow_states,
        c_ref_min=c_ref_min,
        c_ref_max=c_ref_max,
    )


def poisson_joint(domain: LatticeDomain, mean_d: float, mean_c: float) -> dict:
    """Product-Poisson weights on the initial domain, renormalized to mass one."""
    if not domain.slow_states:
        raise EmptyDomainError("empty initial domain")

    def log_pmf(k: int, lam: float) -> float:
        if lam <= 0:
            return 0.0 if k == 0 else -math.inf
        return k * math.log(lam) - lam - math.lgamma(k + 1)

    weights: dict = {}
    for d in domain.initial_slow_states:
        for c in domain.fast_grid[d]:
            lw = sum(log_pmf(x, mean_d) for x in d) + sum(log_pmf(x, mean_c) for x in c)
            weights[(d, c)] = math.exp(lw)
    total = sum(weights.values())
    if total <= 0:
        raise EmptyDomainError("initial distribution has zero mass on the domain")
    return {k: v / total for k, v in weights.items()}


def init_poisson(domain_0: LatticeDomain, cfg: SolverConfig) -> MomentField:
    """Marginals and conditional moments of the restricted product-Poisson start.

    Every slow state in the initial domain receives strictly positive mass, so
    conditional moments are defined everywhere from the first step.
    """
    joint = poisson_joint(domain_0, cfg.poisson_mean_d, cfg.poisson_mean_c)
    fd = domain_0.fast_dim
    pairs = second_order_indices(fd)
    marg, means, centrals = [], [], []
    for d in domain_0.slow_states:
        row = domain_0.fast_grid[d]
        masses = [joint[(d, c)] for c in row]
        p_d = sum(masses)
        marg.append(p_d)
        mean = tuple(sum(w * c[j] for w, c in zip(masses, row)) / p_d for j in range(fd))
        means.append(mean)
        crow = []
        for midx in pairs:
            k, l = _pair_coords(midx)
            val = sum(w * (c[k] - mean[k]) * (c[l] - mean[l]) for w, c in zip(masses, row)) / p_d
            crow.append(val)
        centrals.append(tuple(crow))
    return MomentField(
        slow_states=domain_0.slow_states,
        marginal=tuple(marg),
        cond_mean=tuple(means),
        cond_central=tuple(centrals),
        fast_count=fd,
    )


def _pair_coords(midx: tuple[int, ...]) -> tuple[int, int]:
    coords = [j for j, m in enumerate(midx) for _ in range(m)]
    return coords[0], coords[1]


@dataclass
class ClampCounters:
    """Mutable tally of clamp events applied during stepping."""

    marginal: int = 0
    central: int = 0

    def total(self) -> int:
        return self.marginal + self.central


def _field_rhs(
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    field: MomentField,
    closure: ClosureConfig,
    mass_floor: float,
):
    """All time derivatives at one time level, sharing one expectation cache.

    Conditional-moment derivatives are forced to zero (frozen) wherever the
    marginal sits below the mass floor.
    """
    cache: dict = {}
    fd = field.fast_count
    pairs = second_order_indices(fd)
    mdot, meandot, centraldot = [], [], []
    for i, d in enumerate(field.slow_states):
        mdot.append(marginal_rhs(net, decomp, field, d, closure, cache))
    for i, d in enumerate(field.slow_states):
        if field.marginal[i] < mass_floor:
            meandot.append((0.0,) * fd)
            centraldot.append((0.0,) * len(pairs))
            continue
        mr = tuple(
            cond_mean_rhs(
                net, decomp, field, d, m, mass_floor, closure,
                marginal_rhs_value=mdot[i], cache=cache,
            )
            for m in range(fd)
        )
        meandot.append(mr)
        centraldot.append(
            tuple(
                central_moment_rhs(
                    net, decomp, field, d, midx, mr, mass_floor, closure,
                    marginal_rhs_value=mdot[i], cache=cache,
                )
                for midx in pairs
            )
        )
    return mdot, meandot, centraldot


def _apply(field: MomentField, rates, factor: float) -> MomentField:
    mdot, meandot, centraldot = rates
    return MomentField(
        slow_states=field.slow_states,
        marginal=tuple(p + factor * dp for p, dp in zip(field.marginal, mdot)),
        cond_mean=tuple(
            tuple(x + factor * dx for x, dx in zip(row, drow))
            for row, drow in zip(field.cond_mean, meandot)
        ),
        cond_central=tuple(
            tuple(x + factor * dx for x, dx in zip(row, drow))
            for row, drow in zip(field.cond_central, centraldot)
        ),
        fast_count=field.fast_count,
        higher_central=field.higher_central,
    )


def step(
    field: MomentField,
    domain: LatticeDomain,
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    cfg: SolverConfig,
    counters: ClampCounters | None = None,
    closure: ClosureConfig = DEFAULT_CLOSURE,
) -> MomentField:
    """Advance the field by one time step of size ``delta``.

    All derivatives are evaluated at the same time level before updating.
    Negative marginals and negative diagonal second central moments are
    clamped to zero afterwards, with clamp events counted.  Raises on
    non-finite values.
    """
    h = cfg.delta
    if cfg.scheme is Scheme.EULER:
        new = _apply(field, _field_rhs(net, decomp, field, closure, cfg.mass_floor), h)
    else:
        k1 = _field_rhs(net, decomp, field, closure, cfg.mass_floor)
        k2 = _field_rhs(net, decomp, _apply(field, k1, h / 2), closure, cfg.mass_floor)
        k3 = _field_rhs(net, decomp, _apply(field, k2, h / 2), closure, cfg.mass_floor)
        k4 = _field_rhs(net, decomp, _apply(field, k3, h), closure, cfg.mass_floor)
        combined = tuple(
            [
                _combine_rk4(a, b, c_, d_)
                for a, b, c_, d_ in zip(k1[part], k2[part], k3[part], k4[part])
            ]
            for part in range(3)
        )
        new = _apply(field, combined, h)
    return _clamp(new, counters)


def _combine_rk4(a, b, c, d):
    if isinstance(a, tuple):
        return tuple((x1 + 2 * x2 + 2 * x3 + x4) / 6 for x1, x2, x3, x4 in zip(a, b, c, d))
    return (a + 2 * b + 2 * c + d) / 6


def _clamp(field: MomentField, counters: ClampCounters | None) -> MomentField:
    pairs = second_order_indices(field.fast_count)
    diag = [pos for pos, m in enumerate(pairs) if max(m) == 2]
    marg = list(field.marginal)
    centrals = [list(row) for row in field.cond_central]
    for i in range(len(marg)):
        if not math.isfinite(marg[i]) or any(
            not math.isfinite(x) for x in field.cond_mean[i]
        ) or any(not math.isfinite(x) for x in centrals[i]):
            raise NumericalInstabilityError(
                f"non-finite value at slow state {field.slow_states[i]!r}"
            )
        if marg[i] < 0.0:
            marg[i] = 0.0
            if counters is not None:
                counters.marginal += 1
        for pos in diag:
            if centrals[i][pos] < 0.0:
                centrals[i][pos] = 0.0
                if counters is not None:
                    counters.central += 1
    return MomentField(
        slow_states=field.slow_states,
        marginal=tuple(marg),
        cond_mean=field.cond_mean,
        cond_central=tuple(tuple(row) for row in centrals),
        fast_count=field.fast_count,
        higher_central=field.higher_central,
    )


def expand_slow_domain(
    field: MomentField,
    domain: LatticeDomain,
    cfg: SolverConfig,
    step_index: int,
) -> tuple[MomentField, LatticeDomain]:
    """Append the next slow state when the boundary marginal exceeds the threshold.

    The new state's conditional mean and second central moments are copied
    from the previous boundary state; its marginal follows the configured
    initialization mode.  No-op when the boundary mass is at or below the
    threshold, at the lattice cap, or when there is no slow counter.
    """
    if domain.slow_dim == 0 or not math.isfinite(cfg.epsilon_expand):
        return field, domain
    if domain.slow_dim != 1:
        raise ConfigError("adaptive slow-domain expansion supports exactly one slow counter")
    d_top = domain.slow_states[-1]
    if field.marginal_of(d_top) <= cfg.epsilon_expand:
        return field, domain
    if d_top[0] >= domain.slow_caps[0]:
        return field, domain
    d_new = (d_top[0] + 1,)
    if cfg.expansion_mass_init is ExpansionMassInit.PAPER_AVERAGE:
        new_mass = sum(field.marginal) / (len(field.slow_states) + 1)
    else:
        new_mass = 0.0
    marg = list(field.marginal) + [new_mass]
    if cfg.renormalize_on_expand:
        total = sum(marg)
        marg = [p / total for p in marg]
    top = field.index_of(d_top)
    new_field = MomentField(
        slow_states=field.slow_states + (d_new,),
        marginal=tuple(marg),
        cond_mean=field.cond_mean + (field.cond_mean[top],),
        cond_central=field.cond_central + (field.cond_central[top],),
        fast_count=field.fast_count,
        higher_central=field.higher_central,
    )
    new_domain = replace(
        domain,
        slow_states=domain.slow_states + (d_new,),
        expansion_log=domain.expansion_log + ((step_index, d_new),),
    )
    return new_field, new_domain


def build_fast_domain(
    field_at_tau: MomentField, domain: LatticeDomain, cfg: SolverConfig
) -> LatticeDomain:
    """Attach fast-counter grids to every slow state added during the run.

    Per fast coordinate the grid spans the initial reference bounds inflated
    by ``epsilon_sigma`` conditional standard deviations, clipped to
    nonnegative values, the lattice caps, and the feasibility predicate.
    States already in the initial domain keep their initial rows.
    """
    new_rows = dict(domain.fast_grid)
    initial = set(domain.initial_slow_states)
    fd = domain.fast_dim
    pairs = second_order_indices(fd)
    diag_pos = {j: pairs.index(_diag_index(fd, j)) for j in range(fd)}
    for d in domain.slow_states:
        if d in initial:
            continue
        sigmas = []
        for j in range(fd):
            var = field_at_tau.cond_central[field_at_tau.index_of(d)][diag_pos[j]]
            sigmas.append(math.sqrt(max(var, 0.0)))
        ranges = []
        for j in range(fd):
            lo = max(domain.c_ref_min[j] - cfg.epsilon_sigma * sigmas[j], 0.0)
            hi = min(domain.c_ref_max[j] + cfg.epsilon_sigma * sigmas[j], domain.fast_caps[j])
            ranges.append(range(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1))
        row = tuple(c for c in itertools.product(*ranges) if domain.feasible(d, c))
        new_rows[d] = row
    return replace(domain, fast_grid=new_rows)


def _diag_index(fast_count: int, j: int) -> tuple[int, ...]:
    m = [0] * fast_count
    m[j] = 2
    return tuple(m)


@dataclass
class RunStats:
    """Aggregates reported after a run."""

    steps: int = 0
    clamps: ClampCounters = dc_field(default_factory=ClampCounters)
    final_mass: float = 0.0


def run_to_time(
    net: ReactionNetwork,
    cfg: SolverConfig,
    domain_0: LatticeDomain,
    closure: ClosureConfig = DEFAULT_CLOSURE,
    diagnostics=None,
    stats: RunStats | None = None,
) -> tuple[MomentField, LatticeDomain]:
    """Initialize, step to the target time with expansion checks, attach fast grids.

    ``diagnostics`` may be a writable text stream receiving one
    ``step,total_mass,domain_size,clamp_events`` line per step.
    """
    decomp = domain_0.decomp
    if domain_0.slow_dim > 1 and math.isfinite(cfg.epsilon_expand):
        raise ConfigError(
            "adaptive slow-domain expansion supports exactly one slow counter; "
            "set epsilon_expand to infinity for multi-counter slow tiers"
        )
    field = init_poisson(domain_0, cfg)
    domain = domain_0
    counters = stats.clamps if stats is not None else ClampCounters()
    if diagnostics is not None:
        diagnostics.write("step,total_mass,domain_size,clamp_events\n")
    for j in range(1, cfg.step_count + 1):
        before = counters.total()
        field = step(field, domain, net, decomp, cfg, counters, closure)
        if domain.slow_dim == 1 and math.isfinite(cfg.epsilon_expand):
            field, domain = expand_slow_domain(field, domain, cfg, j)
        if diagnostics is not None:
            diagnostics.write(
                f"{j},{field.total_mass():.17g},{len(domain.slow_states)},"
                f"{counters.total() - before}\n"
            )
    domain = build_fast_domain(field, domain, cfg)
    if stats is not None:
        stats.steps = cfg.step_count
        stats.final_mass = field.total_mass()
    return field, domain
