"""Text serialization for density grids, marginals, domains, and run metadata.

Grid files carry a single header line followed by ``d,c,p`` rows in
lexicographic state order.  Masses are printed with 17 significant digits so a
write/read round trip reproduces them exactly.  All writers go through a
temp-file rename, so partially written outputs never appear under their final
name.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path

from .errors import ConfigError
from .integrator import LatticeDomain
from .moments import MomentField, second_order_indices
from .oracles import JointDensityGrid

GRID_HEADER_RE = re.compile(r"^# hme-grid v1 tau=(?P<tau>\S+) total_mass=(?P<mass>\S+)$")


def _fmt_state(state: tuple[int, ...]) -> str:
    return ";".join(str(int(x)) for x in state)


def _parse_state(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(";")) if text else ()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_grid(grid: JointDensityGrid, path) -> None:
    lines = [f"# hme-grid v1 tau={grid.time:.17g} total_mass={grid.total_mass():.17g}"]
    for d, c in sorted(grid.mass):
        lines.append(f"{_fmt_state(d)},{_fmt_state(c)},{grid.mass[(d, c)]:.17g}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_grid(path) -> JointDensityGrid:
    path = Path(path)
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty grid file")
    match = GRID_HEADER_RE.match(lines[0])
    if not match:
        raise ConfigError(f"{path}: missing or malformed grid header line")
    tau = float(match.group("tau"))
    mass: dict = {}
    for ln_no, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ConfigError(f"{path}:{ln_no}: expected 'd,c,p', got {line!r}")
        d = _parse_state(parts[0])
        c = _parse_state(parts[1])
        mass[(d, c)] = float(parts[2])
    return JointDensityGrid(mass=mass, time=tau)


def write_marginals_csv(field: MomentField, path) -> None:
    fd = field.fast_count
    pairs = second_order_indices(fd)
    mean_cols = ",".join(f"cond_mean_{j}" for j in range(fd))
    central_cols = ",".join("cond_central_" + "".join(map(str, m)) for m in pairs)
    lines = [f"d,p,{mean_cols},{central_cols}"]
    for i, d in enumerate(field.slow_states):
        means = ",".join(f"{x:.17g}" for x in field.cond_mean[i])
        cents = ",".join(f"{x:.17g}" for x in field.cond_central[i])
        lines.append(f"{_fmt_state(d)},{field.marginal[i]:.17g},{means},{cents}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_domain_csv(domain: LatticeDomain, path) -> None:
    """Lattice membership rows tagged by origin: initial box or expansion."""
    initial = set(domain.initial_slow_states)
    lines = ["d,c,origin"]
    for d, c in domain.points():
        origin = "initial" if d in initial else "expanded"
        lines.append(f"{_fmt_state(d)},{_fmt_state(c)},{origin}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_run_meta(path, meta: dict) -> None:
    atomic_write_text(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
