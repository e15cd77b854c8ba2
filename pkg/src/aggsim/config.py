"""Strict key = value configuration files.

Plain text, '#' comments, `[section]` headers for grid / physics / scheme /
experiment.  Unknown sections or keys are errors: a typo in a physics
parameter must never silently fall back to a default.
"""

from __future__ import annotations

import hashlib

from .cahn_hilliard import ChSolveParams
from .coupled import RunConfig
from .errors import ParseError, ValidationError
from .grid_ops import GridSpec
from .materials import PhysicalParams

_SCHEMA = {
    "grid": {
        "nx": (int, None), "ny": (int, None),
        "Lx": (float, 1.0), "Ly": (float, 1.0),
        "bc_x": (str, "periodic"), "bc_y": (str, "periodic"),
    },
    "physics": {
        "rho1": (float, 1.0), "rho2": (float, 1.0),
        "nu1": (float, 1.0), "nu2": (float, 1.0),
        "theta": (float, 1.0), "theta0": (float, 2.0),
        "a_coeffs": ("floats", (1.0,)), "b_coeffs": ("floats", (1.0,)),
        "a_lo": (float, None), "a_hi": (float, None),
        "b_lo": (float, None), "b_hi": (float, None),
        "sep_guard": (float, 1e-9),
    },
    "scheme": {
        "dt": (float, None), "t_end": (float, None),
        "diag_every": (int, 1), "snapshot_every": (int, 0),
        "ordering": (str, "ch_first"),
        "newton_tol": (float, 1e-10), "newton_max": (int, 50),
        "max_halvings": (int, 30), "linear_tol": (float, 1e-11),
        "poisson_tol": (float, 1e-10), "viscous_tol": (float, 1e-10),
        "grad_v_r": (float, 2.0),
    },
    "experiment": {
        "mode": (str, "spinodal"), "seed": (int, 0),
        "mean_phi": (float, 0.0), "noise_amp": (float, 1e-2),
        "eps": (float, 0.1), "eta1": (float, 1e-3), "eta2": (float, 1e-3),
        "eq_seed": (str, "step_x"), "eq_tol": (float, 1e-8),
        "eq_max_t": (float, 1e6), "eq_dt0": (float, 1e-3),
        "eq_dt_max": (float, 256.0),
    },
}

_REQUIRED = {("grid", "nx"), ("grid", "ny"), ("scheme", "dt"),
             ("scheme", "t_end")}


def parse_config_text(text: str) -> dict:
    """Parse config text into {section: {key: value}} with defaults resolved.

    Raises:
        ParseError: malformed lines, unknown sections/keys, bad literals.
        ValidationError: missing required keys or inconsistent physics.
    """
    values: dict[str, dict] = {s: {} for s in _SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SCHEMA:
                raise ParseError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
        if section is None:
            raise ParseError("key = value before any [section] header",
                             line=lineno)
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in _SCHEMA[section]:
            raise ParseError(f"unknown key {key!r} in [{section}]", line=lineno)
        if key in values[section]:
            raise ParseError(f"duplicate key {key!r} in [{section}]",
                             line=lineno)
        values[section][key] = _convert(section, key, val, lineno)

    for sec, keys in _SCHEMA.items():
        for key, (_, default) in keys.items():
            if key not in values[sec]:
                if (sec, key) in _REQUIRED:
                    raise ValidationError(f"missing required key [{sec}] {key}")
                if default is not None or key in ("a_lo", "a_hi", "b_lo", "b_hi"):
                    values[sec][key] = default
    return values


def _convert(section, key, text, lineno):
    kind, _ = _SCHEMA[section][key]
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == "floats":
            return tuple(float(tok) for tok in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ParseError(f"cannot parse {key} = {text!r}: {exc}",
                         line=lineno) from exc


def build_run_config(values: dict) -> RunConfig:
    """Materialize a validated RunConfig from parsed values."""
    g = values["grid"]
    try:
        grid = GridSpec(nx=g["nx"], ny=g["ny"], Lx=g["Lx"], Ly=g["Ly"],
                        bc_x=g["bc_x"], bc_y=g["bc_y"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    ph = values["physics"]
    try:
        params = PhysicalParams(
            rho1=ph["rho1"], rho2=ph["rho2"], nu1=ph["nu1"], nu2=ph["nu2"],
            theta=ph["theta"], theta0=ph["theta0"],
            a_coeffs=ph["a_coeffs"], b_coeffs=ph["b_coeffs"],
            a_lo=ph["a_lo"], a_hi=ph["a_hi"],
            b_lo=ph["b_lo"], b_hi=ph["b_hi"],
            sep_guard=ph["sep_guard"],
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    sc = values["scheme"]
    ex = values["experiment"]
    try:
        solve = ChSolveParams(newton_tol=sc["newton_tol"],
                              newton_max=sc["newton_max"],
                              max_halvings=sc["max_halvings"],
                              linear_tol=sc["linear_tol"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return RunConfig(
        grid=grid, params=params, dt=sc["dt"], t_end=sc["t_end"],
        diag_every=sc["diag_every"], snapshot_every=sc["snapshot_every"],
        ordering=sc["ordering"], ch_solve=solve,
        poisson_tol=sc["poisson_tol"], viscous_tol=sc["viscous_tol"],
        grad_v_r=sc["grad_v_r"], experiment_mode=ex["mode"], seed=ex["seed"],
        mean_phi=ex["mean_phi"], noise_amp=ex["noise_amp"],
    )


def parse_config(text: str) -> RunConfig:
    """Text to RunConfig in one go (the usual entry point)."""
    return build_run_config(parse_config_text(text))


def canonical_text(values: dict) -> str:
    """Deterministic serialization of resolved values (for hashing)."""
    lines = []
    for sec in sorted(values):
        lines.append(f"[{sec}]")
        for key in sorted(values[sec]):
            val = values[sec][key]
            if isinstance(val, tuple):
                val = ",".join(repr(float(x)) for x in val)
            lines.append(f"{key} = {val!r}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> bytes:
    """sha256 of the canonical resolved config (snapshot restart guard)."""
    return hashlib.sha256(canonical_text(values).encode()).digest()
