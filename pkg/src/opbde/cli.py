"""Command line: ``run``, ``compare`` and ``sweep``.

Exit status is 0 on success, 1 for configuration errors and 2 when a
step fails.  ``OPBDE_OUTPUT_ROOT`` relocates relative output directories.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, override, parse_config
from .experiments import COLUMNS, build, fields_at, run
from .grid import Grid, GridMismatchError
from .model import ParameterError
from .scheme import AssemblyError, StepFailure
from .verify import compare, embed_reference, l2_error_restricted

log = logging.getLogger("opbde")

OUTPUT_ROOT_ENV = "OPBDE_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

SWEEP_KEYS = {"eps": ("physics", "eps"), "gamma": ("physics", "gamma"), "dt": ("time", "dt")}


def output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))


def write_snapshot(path, phi: np.ndarray, grid: Grid, t: float) -> None:
    """Header ``Nx Ny Lx Ly t`` then ``Ny`` rows of ``Nx`` values, j ascending."""
    grid.check(phi)
    with open(path, "w") as fh:
        fh.write(f"{grid.Nx} {grid.Ny} {grid.Lx!r} {grid.Ly!r} {float(t)!r}\n")
        np.savetxt(fh, phi.T, fmt="%.17g")


def read_snapshot(path) -> tuple[np.ndarray, tuple]:
    """Inverse of ``write_snapshot``: ``(phi, (Nx, Ny, Lx, Ly, t))``."""
    with open(path) as fh:
        head = fh.readline().split()
        data = np.loadtxt(fh, ndmin=2)
    nx, ny = int(head[0]), int(head[1])
    return data.T.reshape(nx, ny), (nx, ny, float(head[2]), float(head[3]), float(head[4]))


def cmd_run(cfg: RunConfig) -> int:
    out = output_dir(cfg)
    (out / "resolved.ini").write_text(cfg.to_text())
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    sim = build(cfg)
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        state = sim.state0
        try:
            for state, rec in run(cfg, sim):
                writer.writerow([_fmt(rec[c]) for c in COLUMNS])
                fh.flush()
                n = state.n
                if n == 0 or (cfg.snapshot_every and n % cfg.snapshot_every == 0):
                    write_snapshot(snaps / f"phi_{n:07d}.txt", state.phi, sim.grid, n * cfg.dt)
        except StepFailure:
            write_snapshot(snaps / f"phi_{state.n:07d}.txt", state.phi, sim.grid, state.n * cfg.dt)
            raise
    write_snapshot(snaps / f"phi_{state.n:07d}.txt", state.phi, sim.grid, state.n * cfg.dt)
    log.info("run finished: %d steps, output in %s", state.n, out)
    return EXIT_OK


def cmd_compare(ref_cfg: RunConfig, ext_cfg: RunConfig, times) -> int:
    out = output_dir(ext_cfg)
    (out / "reference.ini").write_text(ref_cfg.to_text())
    (out / "extended.ini").write_text(ext_cfg.to_text())
    try:
        report = compare(ref_cfg, ext_cfg, times)
    except GridMismatchError as exc:
        raise ConfigError(f"reference and extended grids are not aligned: {exc}") from exc
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "l2_error", "eps", "digest"])
        for t, e in zip(report.times, report.l2_errors):
            writer.writerow([_fmt(t), _fmt(e), _fmt(report.eps), report.digest])
    return EXIT_OK


def _final(cfg: RunConfig):
    """Final field and summary metrics of one member run."""
    sim = build(cfg)
    energy, resid, drift = None, 0.0, 0.0
    state = sim.state0
    for state, rec in run(cfg, sim):
        energy = rec["energy"]
        if np.isfinite(rec["energy_law_residual"]):
            resid = max(resid, rec["energy_law_residual"])
        drift = max(drift, abs(rec["volume_drift"]))
    return sim, state, {"steps": state.n, "final_energy": energy,
                        "max_energy_law_residual": resid, "max_volume_drift": drift}


SWEEP_COLUMNS = (
    "key", "value", "steps", "final_energy", "max_energy_law_residual", "max_volume_drift",
    "l2_error", "l2_ratio", "self_diff", "self_ratio",
)


def cmd_sweep(cfg: RunConfig, key: str, values, ref_cfg: RunConfig | None = None) -> int:
    """One row per member, in the given order.

    ``l2_error`` is against ``ref_cfg`` at the final time; ``self_diff`` is
    the masked L2 difference to the next member's final field.  The
    ``*_ratio`` columns divide consecutive entries, which for a time-step
    sweep with halving ``dt`` estimates ``2^order``.
    """
    if not values:
        raise ConfigError("sweep needs at least one value")
    if key not in SWEEP_KEYS:
        raise ConfigError(f"sweep key must be one of {sorted(SWEEP_KEYS)}")
    section, name = SWEEP_KEYS[key]
    out = output_dir(cfg)
    (out / "resolved.ini").write_text(cfg.to_text())
    if ref_cfg is not None:
        (out / "reference.ini").write_text(ref_cfg.to_text())
        ref_sim, ref_fields = fields_at(ref_cfg, [cfg.t_final])
    rows, finals = [], []
    for i, v in enumerate(values):
        member = override(cfg, section, name, v)
        (out / f"member_{i}.ini").write_text(member.to_text())
        sim, state, row = _final(member)
        row.update(key=key, value=v)
        if ref_cfg is not None:
            ref = embed_reference(ref_fields[cfg.t_final], ref_sim.grid, sim.grid)
            row["l2_error"] = l2_error_restricted(state.phi, ref, sim.psi, sim.grid)
        finals.append((sim, state.phi))
        rows.append(row)
    for i in range(len(rows) - 1):
        (sim_a, phi_a), (sim_b, phi_b) = finals[i], finals[i + 1]
        if sim_a.grid == sim_b.grid:
            rows[i]["self_diff"] = l2_error_restricted(phi_a, phi_b, sim_b.psi, sim_b.grid)
    for col, ratio in (("l2_error", "l2_ratio"), ("self_diff", "self_ratio")):
        for i in range(1, len(rows)):
            a, b = rows[i - 1].get(col), rows[i].get(col)
            if a is not None and b:
                rows[i][ratio] = a / b
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row["key"], row["value"]] + [_fmt(row.get(c)) for c in SWEEP_COLUMNS[2:]])
    return EXIT_OK


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opbde", description="Embedded-domain Cahn-Hilliard solver")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one configuration")
    p.add_argument("config")
    p = sub.add_parser("compare", help="L2 errors of an extended run against a reference run")
    p.add_argument("ref")
    p.add_argument("ext")
    p.add_argument("--times", required=True, help="comma-separated output times")
    p = sub.add_parser("sweep", help="run a configuration over a list of values")
    p.add_argument("config")
    p.add_argument("--key", required=True, choices=sorted(SWEEP_KEYS))
    p.add_argument("--values", required=True, help="comma-separated values ('inf' allowed for gamma)")
    p.add_argument("--reference", help="reference configuration for L2 errors")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(parse_config(args.config))
        if args.command == "compare":
            return cmd_compare(parse_config(args.ref), parse_config(args.ext), _floats(args.times))
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        ref = parse_config(args.reference) if args.reference else None
        return cmd_sweep(parse_config(args.config), args.key, values, ref)
    except (ConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, AssemblyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
