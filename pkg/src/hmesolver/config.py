"""Strict YAML run-configuration parsing.

The configuration document is YAML with a fixed schema: unknown keys are
rejected with their path, required keys are reported together when missing,
and every value is type- and range-checked before any numerics run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import yaml

from .errors import ConfigError
from .integrator import ExpansionMassInit, Scheme, SolverConfig
from .network import Kinetics, Reaction, ReactionNetwork, Tier

_REQUIRED = (
    "network.species",
    "network.initial_counts",
    "network.reactions",
    "solver.tau",
    "domain.caps",
    "domain.init_caps",
)


@dataclass(frozen=True)
class MaxEntConfig:
    tol: float = 1e-8
    max_iter: int = 200
    mass_floor: float = 1e-12


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    emit_diagnostics: bool = False


@dataclass(frozen=True)
class OracleConfig:
    n_traj: int = 100000
    seed: int = 1


@dataclass(frozen=True)
class RunConfig:
    network: ReactionNetwork
    solver: SolverConfig
    slow_caps: tuple[int, ...]
    fast_caps: tuple[int, ...]
    init_slow_caps: tuple[int, ...]
    init_fast_caps: tuple[int, ...]
    maxent: MaxEntConfig = dc_field(default_factory=MaxEntConfig)
    output: OutputConfig = dc_field(default_factory=OutputConfig)
    oracle: OracleConfig = dc_field(default_factory=OracleConfig)
    raw: dict = dc_field(default_factory=dict, repr=False)


def _require_mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(section: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")


def _get_number(section: dict, key: str, path: str, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")
    return value


def _get_int_list(section: dict, key: str, path: str) -> tuple[int, ...]:
    value = section.get(key)
    if not isinstance(value, list) or not all(
        isinstance(x, int) and not isinstance(x, bool) for x in value
    ):
        raise ConfigError(f"{path}.{key}: expected a list of integers")
    return tuple(value)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document into a RunConfig."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration parse error: {exc}") from exc
    if doc is None:
        raise ConfigError(
            "empty configuration; required fields: " + ", ".join(_REQUIRED)
        )
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a mapping")
    _reject_unknown(doc, {"network", "solver", "domain", "maxent", "output", "oracle"}, "config")

    missing = []
    net_sec = _require_mapping(doc.get("network"), "network")
    solver_sec = _require_mapping(doc.get("solver"), "solver")
    domain_sec = _require_mapping(doc.get("domain"), "domain")
    for path, sec, key in (
        ("network.species", net_sec, "species"),
        ("network.initial_counts", net_sec, "initial_counts"),
        ("network.reactions", net_sec, "reactions"),
        ("solver.tau", solver_sec, "tau"),
        ("domain.caps", domain_sec, "caps"),
        ("domain.init_caps", domain_sec, "init_caps"),
    ):
        if key not in sec:
            missing.append(path)
    if missing:
        raise ConfigError("missing required field(s): " + ", ".join(missing))

    network = _parse_network(net_sec)
    solver = _parse_solver(solver_sec)
    L, F = network.slow_count, network.fast_count
    _reject_unknown(domain_sec, {"caps", "init_caps"}, "domain")
    caps = _get_int_list(domain_sec, "caps", "domain")
    init_caps = _get_int_list(domain_sec, "init_caps", "domain")
    if len(caps) != L + F:
        raise ConfigError(
            f"domain.caps: expected {L + F} entries (slow counters then fast counters), "
            f"got {len(caps)}"
        )
    if len(init_caps) != L + F:
        raise ConfigError(f"domain.init_caps: expected {L + F} entries, got {len(init_caps)}")
    if any(x < 0 for x in caps) or any(x < 0 for x in init_caps):
        raise ConfigError("domain caps must be nonnegative")
    if any(i > c for i, c in zip(init_caps, caps)):
        raise ConfigError("domain.init_caps must not exceed domain.caps")

    maxent_sec = _require_mapping(doc.get("maxent"), "maxent")
    _reject_unknown(maxent_sec, {"tol", "max_iter", "mass_floor"}, "maxent")
    maxent = MaxEntConfig(
        tol=float(_get_number(maxent_sec, "tol", "maxent", default=1e-8)),
        max_iter=int(_get_number(maxent_sec, "max_iter", "maxent", default=200)),
        mass_floor=float(_get_number(maxent_sec, "mass_floor", "maxent", default=1e-12)),
    )
    if maxent.tol <= 0 or maxent.max_iter < 1 or maxent.mass_floor < 0:
        raise ConfigError("maxent: tol must be > 0, max_iter >= 1, mass_floor >= 0")

    output_sec = _require_mapping(doc.get("output"), "output")
    _reject_unknown(output_sec, {"directory", "emit_diagnostics"}, "output")
    directory = output_sec.get("directory", "out")
    if not isinstance(directory, str):
        raise ConfigError("output.directory: expected a string")
    emit = output_sec.get("emit_diagnostics", False)
    if not isinstance(emit, bool):
        raise ConfigError("output.emit_diagnostics: expected a boolean")
    output = OutputConfig(directory=directory, emit_diagnostics=emit)

    oracle_sec = _require_mapping(doc.get("oracle"), "oracle")
    _reject_unknown(oracle_sec, {"n_traj", "seed"}, "oracle")
    oracle = OracleConfig(
        n_traj=int(_get_number(oracle_sec, "n_traj", "oracle", default=100000)),
        seed=int(_get_number(oracle_sec, "seed", "oracle", default=1)),
    )
    if oracle.n_traj < 1:
        raise ConfigError("oracle.n_traj must be at least 1")

    return RunConfig(
        network=network,
        solver=solver,
        slow_caps=caps[:L],
        fast_caps=caps[L:],
        init_slow_caps=init_caps[:L],
        init_fast_caps=init_caps[L:],
        maxent=maxent,
        output=output,
        oracle=oracle,
        raw=doc,
    )


def _parse_network(section: dict) -> ReactionNetwork:
    _reject_unknown(section, {"species", "initial_counts", "reactions"}, "network")
    species = section["species"]
    if not isinstance(species, list) or not all(isinstance(s, str) for s in species):
        raise ConfigError("network.species: expected a list of species names")
    counts = section["initial_counts"]
    if not isinstance(counts, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in counts
    ):
        raise ConfigError("network.initial_counts: expected a list of numbers")
    if len(counts) != len(species):
        raise ConfigError("network.initial_counts: length must match network.species")
    raw_reactions = section["reactions"]
    if not isinstance(raw_reactions, list) or not raw_reactions:
        raise ConfigError("network.reactions: expected a nonempty list")
    reactions = []
    for idx, entry in enumerate(raw_reactions):
        path = f"network.reactions[{idx}]"
        entry = _require_mapping(entry, path)
        _reject_unknown(
            entry,
            {"name", "rate_constant", "reactant_orders", "stoichiometry", "tier", "kinetics"},
            path,
        )
        rate = _get_number(entry, "rate_constant", path, required=True)
        orders = _get_int_list(entry, "reactant_orders", path)
        stoich = _get_int_list(entry, "stoichiometry", path)
        if len(orders) != len(species) or len(stoich) != len(species):
            raise ConfigError(f"{path}: vectors must have one entry per species")
        tier_text = entry.get("tier")
        if tier_text not in ("slow", "fast"):
            raise ConfigError(f"{path}.tier: expected 'slow' or 'fast', got {tier_text!r}")
        kin_text = entry.get("kinetics", "power-law")
        if kin_text not in ("power-law", "combinatorial"):
            raise ConfigError(
                f"{path}.kinetics: expected 'power-law' or 'combinatorial', got {kin_text!r}"
            )
        reactions.append(
            Reaction(
                rate_constant=float(rate),
                reactant_orders=orders,
                stoichiometry=stoich,
                tier=Tier(tier_text),
                kinetics_form=Kinetics(kin_text),
                name=str(entry.get("name", f"R{idx + 1}")),
            )
        )
    return ReactionNetwork(
        species_count=len(species),
        initial_state=tuple(float(x) for x in counts),
        reactions=tuple(reactions),
        species_names=tuple(species),
    )


def _parse_solver(section: dict) -> SolverConfig:
    _reject_unknown(
        section,
        {
            "tau",
            "delta",
            "epsilon_expand",
            "epsilon_sigma",
            "poisson_mean_d",
            "poisson_mean_c",
            "scheme",
            "renormalize_on_expand",
            "expansion_mass_init",
            "mass_floor",
        },
        "solver",
    )
    scheme_text = section.get("scheme", "euler")
    if scheme_text not in ("euler", "rk4"):
        raise ConfigError(f"solver.scheme: expected 'euler' or 'rk4', got {scheme_text!r}")
    expansion_text = section.get("expansion_mass_init", "fresh")
    if expansion_text not in ("fresh", "paper-average"):
        raise ConfigError(
            "solver.expansion_mass_init: expected 'fresh' or 'paper-average', "
            f"got {expansion_text!r}"
        )
    renorm = section.get("renormalize_on_expand", False)
    if not isinstance(renorm, bool):
        raise ConfigError("solver.renormalize_on_expand: expected a boolean")
    eps = _get_number(section, "epsilon_expand", "solver", default=1e-6)
    if isinstance(eps, str):
        raise ConfigError("solver.epsilon_expand: expected a number (use .inf to disable)")
    return SolverConfig(
        tau=float(_get_number(section, "tau", "solver", required=True)),
        delta=float(_get_number(section, "delta", "solver", default=1e-4)),
        epsilon_expand=float(eps),
        epsilon_sigma=float(_get_number(section, "epsilon_sigma", "solver", default=2.0)),
        poisson_mean_d=float(_get_number(section, "poisson_mean_d", "solver", default=1.0)),
        poisson_mean_c=float(_get_number(section, "poisson_mean_c", "solver", default=1.0)),
        scheme=Scheme(scheme_text),
        renormalize_on_expand=renorm,
        expansion_mass_init=ExpansionMassInit(expansion_text),
        mass_floor=float(_get_number(section, "mass_floor", "solver", default=1e-12)),
    )


def parse_config_file(path) -> RunConfig:
    with open(path, "r") as handle:
        return parse_config(handle.read())
