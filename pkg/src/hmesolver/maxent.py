"""Maximum-entropy reconstruction of conditional densities from moments.

Each slow state contributes one convex problem: among densities on its fast
counter grid matching the tracked moments, pick the one of maximal Shannon
entropy.  The solution has exponential-family form
``p(c) = exp(-sum_k lam_k * phi_k(c)) / Z`` and is found by minimizing the
smooth convex dual with a damped Newton iteration whose Hessian is the feature
covariance.  Each solve is independent of the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateGridError, EmptyGridError, InfeasibleMomentsError
from .integrator import LatticeDomain
from .moments import MomentField, second_order_indices

_VARIANCE_DEGENERATE = 1e-10


def _monomial(c: tuple, midx: tuple[int, ...]) -> float:
    out = 1.0
    for x, m in zip(c, midx):
        if m:
            out *= float(x) ** m
    return out


@dataclass(frozen=True)
class MaxEntProblem:
    """Moment-matching problem on a discrete fast-counter grid.

    ``constraints`` pairs multi-indices with target raw moments and always
    contains the normalization index (all zeros) with target one.
    """

    grid: tuple[tuple[int, ...], ...]
    constraints: tuple[tuple[tuple[int, ...], float], ...]

    def __post_init__(self):
        grid = tuple(tuple(c) for c in self.grid)
        object.__setattr__(self, "grid", grid)
        constraints = tuple((tuple(m), float(s)) for m, s in self.constraints)
        object.__setattr__(self, "constraints", constraints)
        if not grid:
            raise ValueError("grid must be nonempty")
        if len(set(grid)) != len(grid):
            raise ValueError("grid points must be distinct")
        norm = [s for m, s in constraints if not any(m)]
        if not norm or abs(norm[0] - 1.0) > 1e-12:
            raise ValueError("constraints must include the normalization index with target 1")
        variances = self.implied_variances()
        for j, var in variances.items():
            if var < -1e-9:
                raise ValueError(f"negative implied variance {var} for fast coordinate {j}")

    def implied_variances(self) -> dict[int, float]:
        """Variance per coordinate implied by first plus diagonal second targets."""
        firsts: dict[int, float] = {}
        seconds: dict[int, float] = {}
        for m, s in self.constraints:
            if sum(m) == 1:
                firsts[m.index(1)] = s
            elif sum(m) == 2 and max(m) == 2:
                seconds[m.index(2)] = s
        return {
            j: seconds[j] - firsts[j] ** 2 for j in seconds if j in firsts
        }


@dataclass(frozen=True)
class MaxEntSolution:
    """Reconstructed conditional density with its dual certificate.

    ``multipliers[0]`` is the log normalization constant; the remaining
    entries pair with the non-normalization constraints in problem order.
    ``residual`` is the worst absolute moment mismatch of the density.
    """

    multipliers: np.ndarray
    log_partition: float
    density: dict
    residual: float
    iterations: int
    fallback: str | None = None


def moments_of(density, multi_indices) -> np.ndarray:
    """Raw moments of a normalized density for each requested multi-index."""
    out = []
    for midx in multi_indices:
        midx = tuple(midx)
        out.append(sum(p * _monomial(c, midx) for c, p in density.items()))
    return np.array(out)


def entropy(density) -> float:
    """Shannon entropy -sum p ln p over the support."""
    return -sum(p * math.log(p) for p in density.values() if p > 0.0)


def dual_solve(
    problem: MaxEntProblem,
    tol: float = 1e-8,
    max_iter: int = 200,
    trace: list | None = None,
) -> MaxEntSolution:
    """Solve the moment-matching problem through its Lagrangian dual.

    Damped Newton on ``g(lam) = log Z(lam) + lam . targets``: the gradient is
    the moment mismatch and the Hessian the feature covariance under the
    current density (positive semidefinite; factorized with a small diagonal
    jitter when near-singular).  Terminates once the worst moment residual
    drops to ``tol`` or after ``max_iter`` iterations.  Targets outside the
    grid's moment polytope surface as InfeasibleMomentsError; a zero-variance
    target on a multi-point grid falls back to an exact-mean two-point
    density.
    """
    grid = problem.grid
    non_norm = [(m, s) for m, s in problem.constraints if any(m)]
    if len(grid) == 1:
        density = {grid[0]: 1.0}
        residual = max(
            (abs(_monomial(grid[0], m) - s) for m, s in non_norm), default=0.0
        )
        return MaxEntSolution(
            multipliers=np.zeros(len(non_norm) + 1),
            log_partition=0.0,
            density=density,
            residual=float(residual),
            iterations=0,
        )

    variances = problem.implied_variances()
    if any(v < _VARIANCE_DEGENERATE for v in variances.values()):
        return _two_point_fallback(problem, non_norm)

    fast_dim = len(grid[0])
    for m, s in non_norm:
        if sum(m) == 1:
            j = m.index(1)
            lo = min(c[j] for c in grid)
            hi = max(c[j] for c in grid)
            if not (lo <= s <= hi):
                raise InfeasibleMomentsError(
                    f"mean target {s} outside grid range [{lo}, {hi}] for coordinate {j}"
                )

    feats = np.array([[_monomial(c, m) for m, _ in non_norm] for c in grid], dtype=float)
    targets = np.array([s for _, s in non_norm], dtype=float)
    # features centered at their targets: the multipliers are unchanged and the
    # dual value loses the large lam.targets cancellation
    shifted = feats - targets

    def evaluate(lam_at):
        logw = -shifted @ lam_at
        dual = float(logsumexp(logw))
        probs_at = np.exp(logw - dual)
        mom_at = feats.T @ probs_at
        return dual, probs_at, mom_at

    lam = np.zeros(len(non_norm))
    iterations = 0
    dual, probs, mom = evaluate(lam)
    residual = float(np.abs(mom - targets).max())
    if trace is not None:
        trace.append(dual)
    for iterations in range(1, max_iter + 1):
        if residual <= tol:
            break
        grad = targets - mom
        centered = feats - mom
        hess = centered.T @ (centered * probs[:, None])
        direction = -_solve_spd(hess, grad)
        slope = float(grad @ direction)
        if slope > 0.0:  # numerically non-descent; fall back to steepest descent
            direction = -grad
            slope = -float(grad @ grad)
        # full Newton step first: near the optimum the residual contracts
        # quadratically even when the dual value is flat to machine precision
        dual_try, probs_try, mom_try = evaluate(lam + direction)
        resid_try = float(np.abs(mom_try - targets).max())
        if math.isfinite(resid_try) and resid_try < residual:
            lam = lam + direction
            dual, probs, mom = dual_try, probs_try, mom_try
            residual = resid_try
            if trace is not None:
                trace.append(dual)
            continue
        # globalization: backtracking Armijo on the dual objective
        t = 1.0
        accepted = False
        slack = 1e-13 * max(1.0, abs(dual))
        while t >= 1e-14:
            lam_try = lam + t * direction
            dual_try, probs_try, mom_try = evaluate(lam_try)
            if dual_try <= dual + 1e-4 * t * slope + slack:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if residual <= 100.0 * tol:
                break  # stalled within noise of convergence; report honestly
            raise InfeasibleMomentsError(
                "dual line search failed; moment targets appear infeasible "
                f"(residual {residual:.3e})"
            )
        lam = lam_try
        dual, probs, mom = dual_try, probs_try, mom_try
        residual = float(np.abs(mom - targets).max())
        if trace is not None:
            trace.append(dual)
    log_partition = dual - float(lam @ targets)
    density = {c: float(p) for c, p in zip(grid, probs)}
    return MaxEntSolution(
        multipliers=np.concatenate(([log_partition], lam)),
        log_partition=log_partition,
        density=density,
        residual=residual,
        iterations=iterations,
    )


def _solve_spd(hess: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    jitter = 1e-10
    eye = np.eye(hess.shape[0])
    for _ in range(12):
        try:
            chol = np.linalg.cholesky(hess + jitter * eye)
            y = np.linalg.solve(chol, rhs)
            return np.linalg.solve(chol.T, y)
        except np.linalg.LinAlgError:
            jitter *= 100.0
    raise InfeasibleMomentsError("dual Hessian not factorizable; targets degenerate")


def _two_point_fallback(problem: MaxEntProblem, non_norm) -> MaxEntSolution:
    """Exact-mean two-point density for a zero-variance target."""
    grid = problem.grid
    if len(grid[0]) != 1:
        raise DegenerateGridError(
            "zero-variance target on a multi-point grid with several fast coordinates"
        )
    mean = None
    for m, s in non_norm:
        if sum(m) == 1:
            mean = s
    if mean is None:
        mean = float(grid[0][0])
    values = sorted(c[0] for c in grid)
    if not (values[0] <= mean <= values[-1]):
        raise InfeasibleMomentsError(f"mean target {mean} outside grid range")
    below = max(v for v in values if v <= mean)
    above = min(v for v in values if v >= mean)
    density = {c: 0.0 for c in grid}
    if below == above:
        density[(below,)] = 1.0
    else:
        w = (above - mean) / (above - below)
        density[(below,)] = w
        density[(above,)] = 1.0 - w
    mom = moments_of(density, [m for m, _ in non_norm])
    residual = float(np.abs(mom - np.array([s for _, s in non_norm])).max()) if non_norm else 0.0
    return MaxEntSolution(
        multipliers=np.zeros(len(non_norm) + 1),
        log_partition=0.0,
        density=density,
        residual=residual,
        iterations=0,
        fallback="two-point",
    )


@dataclass(frozen=True)
class ProblemWarning:
    slow_state: tuple[int, ...]
    message: str


def conditional_problems(
    field_at_tau: MomentField,
    domain_star: LatticeDomain,
    mass_floor: float = 1e-12,
    warnings: list | None = None,
) -> list[tuple[tuple[int, ...], MaxEntProblem]]:
    """Assemble one moment problem per retained slow state.

    Constraints are the normalization, the tracked conditional means, and all
    raw second moments derived from the centered ones.  States below the mass
    floor degrade to a one-point problem at the feasible grid point nearest
    their frozen mean; states whose grid clipped to nothing are skipped with a
    warning record.
    """
    fd = field_at_tau.fast_count
    pairs = second_order_indices(fd)
    out: list[tuple[tuple[int, ...], MaxEntProblem]] = []
    for d in domain_star.slow_states:
        grid = domain_star.fast_grid.get(d, ())
        if not grid:
            if warnings is not None:
                warnings.append(ProblemWarning(d, "empty fast grid after feasibility clipping"))
            continue
        mean = field_at_tau.mean_of(d)
        if field_at_tau.marginal_of(d) < mass_floor:
            nearest = min(grid, key=lambda c: sum((x - mu) ** 2 for x, mu in zip(c, mean)))
            problem = MaxEntProblem(grid=(nearest,), constraints=(((0,) * fd, 1.0),))
            out.append((d, problem))
            continue
        constraints: list[tuple[tuple[int, ...], float]] = [((0,) * fd, 1.0)]
        for m in range(fd):
            e_m = tuple(1 if j == m else 0 for j in range(fd))
            constraints.append((e_m, mean[m]))
        for midx in pairs:
            k, l = _pair_coords(midx)
            raw = field_at_tau.central_of(d, midx) + mean[k] * mean[l]
            constraints.append((midx, raw))
        out.append((d, MaxEntProblem(grid=tuple(grid), constraints=tuple(constraints))))
    return out


def _pair_coords(midx: tuple[int, ...]) -> tuple[int, int]:
    coords = [j for j, m in enumerate(midx) for _ in range(m)]
    return coords[0], coords[1]


def assemble_joint(solutions, field_at_tau: MomentField, tau: float = float("nan")):
    """Joint density grid from per-state conditionals times marginals."""
    from .oracles import JointDensityGrid

    mass: dict = {}
    for d, sol in solutions:
        p_d = field_at_tau.marginal_of(d)
        for c, q in sol.density.items():
            if q != 0.0:
                mass[(d, c)] = q * p_d
    if not mass:
        raise EmptyGridError("no mass retained when assembling the joint density")
    return JointDensityGrid(mass=mass, time=tau)
