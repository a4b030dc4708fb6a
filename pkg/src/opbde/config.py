"""Run configuration: sectioned ``key = value`` files.

Every experiment has a full set of defaults; a config file only lists what
it overrides.  Unknown sections or keys are rejected, and errors name the
offending key together with its line in the file.
"""

from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .grid import Grid
from .model import PhysParams
from .scheme import SolverOptions

EXPERIMENTS = ("coarsening", "droplet_flat", "droplet_curved", "custom")


class ConfigError(ValueError):
    pass


# section -> key -> default (as text, exactly what a user would write)
_COMMON = {
    "run": {"experiment": "custom", "solver": "extended", "seed": "0", "output_dir": "out"},
    # an empty origin centres the grid on (0, 0)
    "grid": {"Lx": "1.25", "Ly": "1.25", "Nx": "160", "Ny": "160", "x0": "", "y0": ""},
    "physics": {
        "K": "1e-4", "M": "0.01", "gamma": "inf", "alpha": "0", "A": "0",
        "eps": "0.01", "potential": "quartic",
    },
    "boundary": {"h1": "0", "h2": "0", "h3": "0", "dynamic_edges": ""},
    "time": {"dt": "1e-5", "t_final": "0.01", "diagnostics_every": "1", "snapshot_every": "0"},
    "shape": {
        "kind": "rectangle", "x0": "-0.5", "x1": "0.5", "y0": "-0.5", "y1": "0.5",
        "substrate_y": "0", "amplitude": "0.05", "wavelength": "0.5", "peak_x": "-0.05",
        "cx": "0", "cy": "0", "radius": "0.25", "holes": "", "cuts": "",
    },
    "initial": {
        "kind": "random", "amplitude": "0.001", "cx": "0", "cy": "0.2",
        "radius": "0.2", "width": "0.01", "wavelength": "0.5",
        "taper": "0", "outside": "zero",
    },
    "solver": {
        "method": "auto", "rel_tol": "1e-8", "abs_tol": "1e-13", "max_iterations": "500",
        "drop_tol": "1e-5",
    },
}

_EXPERIMENT_DEFAULTS = {
    "coarsening": {},
    "droplet_flat": {
        "grid": {"Ly": "0.75", "Ny": "96", "y0": "-0.125"},
        "physics": {"gamma": "10", "eps": "2e-3"},
        "boundary": {"dynamic_edges": "bottom top left right"},
        "time": {"dt": "1e-3", "t_final": "10"},
        "shape": {"kind": "rectangle", "y0": "0"},
        "initial": {"kind": "droplet", "outside": "extend"},
    },
    "droplet_curved": {
        "grid": {"Ly": "0.75", "Ny": "96", "y0": "-0.125"},
        "physics": {"gamma": "20", "eps": "2e-3"},
        "time": {"dt": "1e-3", "t_final": "10"},
        "shape": {"kind": "sinusoid", "y1": "0.5"},
        "initial": {"kind": "droplet", "outside": "extend"},
    },
    "custom": {},
}


def defaults_for(experiment: str) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"[run] experiment: unknown experiment {experiment!r}")
    out = {s: dict(kv) for s, kv in _COMMON.items()}
    for s, kv in _EXPERIMENT_DEFAULTS[experiment].items():
        out[s].update(kv)
    out["run"]["experiment"] = experiment
    return out


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    solver: str
    seed: int
    output_dir: str
    grid: Grid
    params: PhysParams
    h: tuple  # (h1, h2, h3) as floats or callables
    dynamic_edges: tuple
    dt: float
    t_final: float
    diagnostics_every: int
    snapshot_every: int
    shape: object
    initial: dict
    solver_opts: SolverOptions
    raw: dict  # resolved section -> key -> text

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for s in _COMMON:
            cp[s] = self.raw[s]
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _key_lines(text: str) -> dict:
    lines = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"\s*([^#;=\s][^=]*?)\s*=", line)
        if m and section is not None:
            lines[(section, m.group(1).strip())] = no
    return lines


def _parse_profile(text: str):
    """Number, or ``cos(c0, c1, k)`` meaning ``c0 + c1 cos(k x)`` on the boundary."""
    try:
        return float(text)
    except ValueError:
        pass
    m = re.fullmatch(r"\s*cos\(\s*([^,]+),\s*([^,]+),\s*([^)]+)\)\s*", text)
    if not m:
        raise ValueError(f"expected a number or cos(c0, c1, k), got {text!r}")
    c0, c1, k = (float(v) for v in m.groups())
    return lambda xb, yb: c0 + c1 * np.cos(k * xb)


def _tuples(text: str, width: int) -> tuple:
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        vals = tuple(float(v) for v in chunk.replace(",", " ").split())
        if len(vals) != width:
            raise ValueError(f"expected {width} numbers per entry, got {chunk!r}")
        out.append(vals)
    return tuple(out)


def build_shape(sh: dict):
    kind = sh["kind"]
    f = lambda k: float(sh[k])  # noqa: E731
    if kind == "rectangle":
        return geo.FullRectangle(f("x0"), f("x1"), f("y0"), f("y1"))
    if kind == "halfplane":
        return geo.HalfPlaneSubstrate(f("substrate_y"), (f("x0"), f("x1"), f("y1")))
    if kind == "sinusoid":
        return geo.SinusoidalSubstrate(
            f("substrate_y"), f("amplitude"), f("wavelength"), f("peak_x"),
            (f("x0"), f("x1"), f("y1")),
        )
    if kind == "disk":
        return geo.Disk(f("cx"), f("cy"), f("radius"))
    if kind == "csg":
        return geo.CSGPolygon(
            f("x0"), f("x1"), f("y0"), f("y1"), _tuples(sh["holes"], 3), _tuples(sh["cuts"], 4)
        )
    raise ValueError(f"unknown shape kind {kind!r}")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _key_lines(text)

    def where(section, key=None):
        no = lines.get((section, key))
        return f"{source}:{no}" if no else source

    experiment = cp.get("run", "experiment", fallback="custom").strip()
    try:
        raw = defaults_for(experiment)
    except ConfigError as exc:
        raise ConfigError(f"{where('run', 'experiment')}: {exc}") from None
    for section in cp.sections():
        if section not in raw:
            raise ConfigError(f"{where(section)}: unknown section [{section}]")
        for key, value in cp[section].items():
            if key not in raw[section]:
                raise ConfigError(f"{where(section, key)}: unknown key {key!r} in [{section}]")
            raw[section][key] = value.strip()

    def get(section, key, conv):
        try:
            return conv(raw[section][key])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where(section, key)}: [{section}] {key}: {exc}") from None

    def check(cond, section, key, msg):
        if not cond:
            raise ConfigError(f"{where(section, key)}: [{section}] {key} {msg}")

    solver = get("run", "solver", str)
    check(solver in ("extended", "reference"), "run", "solver", "must be 'extended' or 'reference'")

    Lx, Ly = get("grid", "Lx", float), get("grid", "Ly", float)
    Nx, Ny = get("grid", "Nx", int), get("grid", "Ny", int)
    check(Lx > 0, "grid", "Lx", "must be positive")
    check(Ly > 0, "grid", "Ly", "must be positive")
    check(Nx >= 2, "grid", "Nx", "must be >= 2")
    check(Ny >= 2, "grid", "Ny", "must be >= 2")
    opt = lambda v: None if v == "" else float(v)  # noqa: E731
    gx0, gy0 = get("grid", "x0", opt), get("grid", "y0", opt)

    gamma_text = raw["physics"]["gamma"].lower()
    if gamma_text in ("inf", "infinity"):
        gamma_inv = 0.0
    else:
        gamma = get("physics", "gamma", float)
        check(gamma > 0, "physics", "gamma", "must be positive or 'inf'")
        gamma_inv = 1.0 / gamma
    phys = {}
    for key in ("K", "M", "eps"):
        phys[key] = get("physics", key, float)
        check(phys[key] > 0, "physics", key, "must be positive")
    for key in ("alpha", "A"):
        phys[key] = get("physics", key, float)
        check(phys[key] >= 0, "physics", key, "must be non-negative")
    params = PhysParams(gamma_inv=gamma_inv, potential=raw["physics"]["potential"], **phys)

    h = tuple(get("boundary", k, _parse_profile) for k in ("h1", "h2", "h3"))
    edges = tuple(e.strip() for e in raw["boundary"]["dynamic_edges"].replace(",", " ").split())
    for e in edges:
        check(e in ("left", "right", "bottom", "top"), "boundary", "dynamic_edges", f"has unknown edge {e!r}")

    dt, t_final = get("time", "dt", float), get("time", "t_final", float)
    check(dt > 0, "time", "dt", "must be positive")
    check(t_final >= 0, "time", "t_final", "must be non-negative")
    n = round(t_final / dt)
    check(abs(n * dt - t_final) <= 1e-9 * max(t_final, dt), "time", "t_final", "must be a whole number of steps")
    diag_every = get("time", "diagnostics_every", int)
    snap_every = get("time", "snapshot_every", int)
    check(diag_every >= 1, "time", "diagnostics_every", "must be >= 1")
    check(snap_every >= 0 and snap_every % diag_every == 0, "time", "snapshot_every",
          "must be 0 or a multiple of diagnostics_every")

    try:
        shape = build_shape(raw["shape"])
    except ValueError as exc:
        raise ConfigError(f"{where('shape')}: [shape] {exc}") from None

    initial = {"kind": raw["initial"]["kind"]}
    check(initial["kind"] in ("random", "droplet", "wave"), "initial", "kind",
          "must be 'random', 'droplet' or 'wave'")
    for key in ("amplitude", "cx", "cy", "radius", "width", "wavelength", "taper"):
        initial[key] = get("initial", key, float)

    initial["outside"] = raw["initial"]["outside"]
    check(initial["outside"] in ("zero", "extend"), "initial", "outside", "must be 'zero' or 'extend'")
    check(initial["wavelength"] > 0, "initial", "wavelength", "must be positive")
    check(initial["taper"] >= 0, "initial", "taper", "must be non-negative")
    check(get("solver", "rel_tol", float) > 0, "solver", "rel_tol", "must be positive")
    check(get("solver", "abs_tol", float) >= 0, "solver", "abs_tol", "must be non-negative")
    check(get("solver", "max_iterations", int) >= 1, "solver", "max_iterations", "must be >= 1")
    check(0 <= get("solver", "drop_tol", float) < 1, "solver", "drop_tol", "must lie in [0, 1)")
    method = raw["solver"]["method"]
    check(method in ("auto", "direct", "gmres", "lagged"), "solver", "method", "is not a known method")
    opts = SolverOptions(
        rel_tol=get("solver", "rel_tol", float),
        abs_tol=get("solver", "abs_tol", float),
        max_iterations=get("solver", "max_iterations", int),
        method=method,
        drop_tol=get("solver", "drop_tol", float),
    )

    return RunConfig(
        experiment=experiment,
        solver=solver,
        seed=get("run", "seed", int),
        output_dir=raw["run"]["output_dir"],
        grid=Grid(Lx, Ly, Nx, Ny, gx0, gy0),
        params=params,
        h=h,
        dynamic_edges=edges,
        dt=dt,
        t_final=t_final,
        diagnostics_every=diag_every,
        snapshot_every=snap_every,
        shape=shape,
        initial=initial,
        solver_opts=opts,
        raw=raw,
    )


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def override(cfg: RunConfig, section: str, key: str, value) -> RunConfig:
    """Copy of ``cfg`` with one setting replaced (used by sweeps)."""
    raw = {s: dict(kv) for s, kv in cfg.raw.items()}
    if key not in raw.get(section, {}):
        raise ConfigError(f"unknown key [{section}] {key}")
    raw[section][key] = value if isinstance(value, str) else repr(float(value)) if not math.isinf(value) else "inf"
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for s in raw:
        cp[s] = raw[s]
    buf = io.StringIO()
    cp.write(buf)
    return parse_config_text(buf.getvalue(), "<override>")
