"""Ground-truth engines: dense counting-lattice CME integration and exact-jump SSA.

Both oracles treat every reaction as a jump on the counting lattice.  The CME
integrates the full probability vector on the truncated feasible lattice with
the same fixed step as the moment solver; the SSA runs independent jump
trajectories with a counter-based generator so results are bit-reproducible
for a given seed.  A total-variation metric compares any two grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyGridError, NumericalInstabilityError
from .network import Kinetics, PropensityDecomposition, ReactionNetwork, propensity

RNG_ALGORITHM = "philox4x64, lockstep vectorized sweeps, stream = f(seed, n_traj)"


@dataclass(frozen=True)
class JointDensityGrid:
    """Probability masses on (slow counter, fast counter) lattice points.

    ``mass`` maps ``(d, c)`` tuple pairs to nonnegative masses totalling at
    most one (zero-mass lattice points may be kept to record the support).
    """

    mass: dict
    time: float

    def total_mass(self) -> float:
        return float(sum(self.mass.values()))

    def points(self) -> list:
        return sorted(self.mass)

    def argmax(self) -> tuple:
        return max(sorted(self.mass), key=lambda pt: self.mass[pt])

    def slow_marginals(self) -> dict:
        out: dict = {}
        for (d, _c), p in self.mass.items():
            out[d] = out.get(d, 0.0) + p
        return out

    def conditional_stats(self) -> dict:
        """Per slow state: (mass, mean vector, diagonal variance vector)."""
        rows: dict = {}
        for (d, c), p in self.mass.items():
            rows.setdefault(d, []).append((c, p))
        out: dict = {}
        for d, items in rows.items():
            p_d = sum(p for _, p in items)
            if p_d <= 0.0:
                continue
            fd = len(items[0][0])
            mean = tuple(sum(p * c[j] for c, p in items) / p_d for j in range(fd))
            var = tuple(
                sum(p * (c[j] - mean[j]) ** 2 for c, p in items) / p_d for j in range(fd)
            )
            out[d] = (p_d, mean, var)
        return out


def _counter_units(net: ReactionNetwork) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Per reaction, the (slow, fast) counter increment of one firing."""
    slow_pos = {k: i for i, k in enumerate(net.slow_indices)}
    fast_pos = {k: j for j, k in enumerate(net.fast_indices)}
    L, F = net.slow_count, net.fast_count
    units = []
    for k in range(len(net.reactions)):
        du = [0] * L
        cu = [0] * F
        if k in slow_pos:
            du[slow_pos[k]] = 1
        else:
            cu[fast_pos[k]] = 1
        units.append((tuple(du), tuple(cu)))
    return units


def _raw_propensity(net: ReactionNetwork, decomp: PropensityDecomposition, k, d, c) -> float:
    """Propensity formula evaluated without the feasibility guard (printed-form mode)."""
    rxn = net.reactions[k]
    x = decomp.species_at(d, c)
    out = rxn.rate_constant
    for s, order in enumerate(rxn.reactant_orders):
        if order == 0:
            continue
        if rxn.kinetics_form is Kinetics.POWER_LAW:
            out *= x[s] ** order
        else:
            prod = 1.0
            for t in range(order):
                prod *= x[s] - t
            out *= prod / math.factorial(order)
    return out


def cme_solve(
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    lattice,
    tau: float,
    delta: float,
    init="point",
    scheme: str = "euler",
    fast_gain_mode: str = "corrected",
) -> JointDensityGrid:
    """Integrate the counting-lattice master equation on a finite domain.

    ``lattice`` lists the feasible (d, c) states; flux into states outside it
    is suppressed, which conserves total mass exactly.  ``init`` is either
    "point" (all mass on the all-zero counters) or a mapping from lattice
    points to initial masses.  ``fast_gain_mode="printed"`` reproduces, for
    fast reactions, the self-cancelling gain form with both terms evaluated at
    the unshifted state; it exists for documentation only and does not
    conserve mass.
    """
    index = {pt: i for i, pt in enumerate(lattice)}
    n = len(lattice)
    units = _counter_units(net)
    rows, cols, vals = [], [], []
    for (d, c), i in index.items():
        for k in range(len(net.reactions)):
            du, cu = units[k]
            target = (tuple(a + b for a, b in zip(d, du)), tuple(a + b for a, b in zip(c, cu)))
            if fast_gain_mode == "printed" and net.reactions[k].tier.value == "fast":
                prev = (
                    tuple(a - b for a, b in zip(d, du)),
                    tuple(a - b for a, b in zip(c, cu)),
                )
                rate_here = _raw_propensity(net, decomp, k, d, c)
                rate_prev = _raw_propensity(net, decomp, k, prev[0], prev[1])
                rows.append(i)
                cols.append(i)
                vals.append(rate_here - rate_prev)
                continue
            if target not in index:
                continue
            rate = propensity(net, decomp, k, d, c)
            if rate == 0.0:
                continue
            j = index[target]
            rows.append(j)
            cols.append(i)
            vals.append(rate)
            rows.append(i)
            cols.append(i)
            vals.append(-rate)
    gen = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    p = np.zeros(n)
    if init == "point":
        origin = ((0,) * net.slow_count, (0,) * net.fast_count)
        p[index[origin]] = 1.0
    else:
        for pt, mass in init.items():
            p[index[pt]] = mass
    steps = int(round(tau / delta))
    for j in range(steps):
        if scheme == "euler":
            p = p + delta * (gen @ p)
        else:
            k1 = gen @ p
            k2 = gen @ (p + 0.5 * delta * k1)
            k3 = gen @ (p + 0.5 * delta * k2)
            k4 = gen @ (p + delta * k3)
            p = p + (delta / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if (j + 1) % 200 == 0 and not np.all(np.isfinite(p)):
            raise NumericalInstabilityError(f"non-finite mass at step {j + 1}")
    if not np.all(np.isfinite(p)):
        raise NumericalInstabilityError("non-finite mass at final time")
    return JointDensityGrid(mass={pt: float(p[i]) for pt, i in index.items()}, time=tau)


def ssa_simulate(
    net: ReactionNetwork,
    decomp: PropensityDecomposition,
    tau: float,
    n_traj: int,
    seed: int,
    init="point",
    max_sweeps: int = 1_000_000,
) -> JointDensityGrid:
    """Empirical counting distribution at ``tau`` from exact-jump trajectories.

    All reactions fire as jumps with exponential waiting times.  Trajectories
    advance in lockstep vectorized sweeps drawing from a Philox counter-based
    generator, so the output is a deterministic function of (seed, n_traj).
    Jumps that would make a consumed species negative are suppressed, matching
    the truncated master-equation generator.  Trajectories whose total rate
    reaches zero simply hold their state to the horizon.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    L, F, M = net.slow_count, net.fast_count, net.species_count
    R = len(net.reactions)
    y0 = np.array(net.initial_state)
    mu_slow = np.array(
        [net.reactions[k].stoichiometry for k in net.slow_indices], dtype=np.int64
    ).reshape(L, M)
    mu_fast = np.array(
        [net.reactions[k].stoichiometry for k in net.fast_indices], dtype=np.int64
    ).reshape(F, M)
    stoich = np.array([r.stoichiometry for r in net.reactions], dtype=np.int64)  # (R, M)
    orders = np.array([r.reactant_orders for r in net.reactions], dtype=np.int64)
    rates = np.array([r.rate_constant for r in net.reactions])
    combinatorial = np.array(
        [r.kinetics_form is Kinetics.COMBINATORIAL for r in net.reactions]
    )

    d = np.zeros((n_traj, L), dtype=np.int64)
    c = np.zeros((n_traj, F), dtype=np.int64)
    if init != "point":
        pts = sorted(init)
        probs = np.array([init[pt] for pt in pts])
        probs = probs / probs.sum()
        chosen = rng.choice(len(pts), size=n_traj, p=probs)
        d_arr = np.array([pt[0] for pt in pts], dtype=np.int64).reshape(len(pts), L)
        c_arr = np.array([pt[1] for pt in pts], dtype=np.int64).reshape(len(pts), F)
        d = d_arr[chosen]
        c = c_arr[chosen]

    t = np.zeros(n_traj)
    active = np.ones(n_traj, dtype=bool)
    for _ in range(max_sweeps):
        if not active.any():
            break
        u_time = rng.random(n_traj)
        u_choice = rng.random(n_traj)
        x = y0[None, :] + d @ mu_slow + c @ mu_fast  # (n, M) species counts
        props = np.empty((n_traj, R))
        for k in range(R):
            val = np.full(n_traj, rates[k])
            for s in range(M):
                r_sk = orders[k, s]
                if r_sk == 0:
                    continue
                base = x[:, s].astype(float)
                if combinatorial[k]:
                    fact = np.ones(n_traj)
                    for tt in range(r_sk):
                        fact *= base - tt
                    val *= fact / math.factorial(r_sk)
                else:
                    val *= base**r_sk
            # suppress jumps that would push a consumed species negative
            feasible_after = ((x + stoich[k][None, :]) >= 0).all(axis=1)
            val = np.where(feasible_after, np.maximum(val, 0.0), 0.0)
            props[:, k] = val
        total = props.sum(axis=1)
        stalled = active & (total <= 0.0)
        active = active & ~stalled
        if not active.any():
            break
        dt = np.full(n_traj, np.inf)
        pos = active & (total > 0.0)
        dt[pos] = -np.log1p(-u_time[pos]) / total[pos]
        t_next = t + dt
        fired = active & (t_next <= tau)
        active = fired
        if not fired.any():
            break
        cum = np.cumsum(props, axis=1)
        threshold = u_choice * total
        choice = (cum < threshold[:, None]).sum(axis=1)
        choice = np.minimum(choice, R - 1)
        slow_pos = {k: i for i, k in enumerate(net.slow_indices)}
        fast_pos = {k: j for j, k in enumerate(net.fast_indices)}
        for k in range(R):
            mask = fired & (choice == k)
            if not mask.any():
                continue
            if k in slow_pos:
                d[mask, slow_pos[k]] += 1
            else:
                c[mask, fast_pos[k]] += 1
        t[fired] = t_next[fired]
    else:
        raise NumericalInstabilityError("sweep limit exceeded in trajectory simulation")

    states = np.concatenate([d, c], axis=1)
    uniq, counts = np.unique(states, axis=0, return_counts=True)
    mass: dict = {}
    for row, cnt in zip(uniq, counts):
        pt = (tuple(int(v) for v in row[:L]), tuple(int(v) for v in row[L:]))
        mass[pt] = cnt / n_traj
    return JointDensityGrid(mass=mass, time=tau)


def total_variation(a: JointDensityGrid, b: JointDensityGrid) -> float:
    """Half the L1 distance after renormalizing each grid to total mass one."""
    ta = a.total_mass()
    tb = b.total_mass()
    if ta <= 0.0 or tb <= 0.0:
        raise EmptyGridError("total variation undefined for a zero-mass grid")
    keys = set(a.mass) | set(b.mass)
    return 0.5 * sum(abs(a.mass.get(k, 0.0) / ta - b.mass.get(k, 0.0) / tb) for k in keys)
