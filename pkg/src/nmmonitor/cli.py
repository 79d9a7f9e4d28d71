"""Command-line front end.

    nmmonitor SUBCOMMAND --config PATH [--seed N] [--out DIR] [--threads N] [--format csv|json]

Subcommands: factorize, trajectory, ensemble, nonselective, validate.
Exit codes: 0 success, 1 configuration or IO error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, kernel, lattice, monitor, validation
from .config import ConfigError, ExperimentConfig, parse_config
from .hilbert import DimensionCapError, NumericError, purity, trace_distance

log = logging.getLogger("nmmonitor")

CSV_SCHEMA_VERSION = 1
SUBCOMMANDS = ("factorize", "trajectory", "ensemble", "nonselective", "validate")


def _rho_columns(d: int, prefix: str = "rho") -> list[str]:
    cols = []
    for i in range(d):
        for j in range(d):
            cols += [f"re_{prefix}_{i}{j}", f"im_{prefix}_{i}{j}"]
    return cols


def _rho_values(rho: np.ndarray) -> list[float]:
    out = []
    for z in np.asarray(rho).ravel():
        out += [float(z.real), float(z.imag)]
    return out


class OutputWriter:
    """Writes tables and text atomically and remembers their checksums."""

    def __init__(self, directory: Path, formats: tuple[str, ...]):
        self.directory = directory
        self.formats = formats
        self.checksums: dict[str, str] = {}
        directory.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str) -> None:
        path = self.directory / name
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=f".{name}.")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(content)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.checksums[name] = hashlib.sha256(content.encode()).hexdigest()

    def table(self, stem: str, columns: list[str], rows: list[list]) -> None:
        for fmt in self.formats:
            if fmt == "csv":
                buf = io.StringIO()
                w = csv.writer(buf, lineterminator="\n")
                w.writerow(columns)
                for r in rows:
                    w.writerow([repr(x) if isinstance(x, float) else x for x in r])
                self.text(f"{stem}.csv", buf.getvalue())
            else:
                payload = {"schema_version": CSV_SCHEMA_VERSION, "columns": columns, "rows": rows}
                self.text(f"{stem}.json", json.dumps(payload, indent=1) + "\n")

    def via_file(self, name: str, write) -> None:
        """Run a ``write(path)`` serializer through the atomic path."""
        with tempfile.TemporaryDirectory(dir=self.directory) as tmp:
            p = Path(tmp) / name
            write(p)
            self.text(name, p.read_text())


def cmd_factorize(cfg: ExperimentConfig, out: OutputWriter, args) -> None:
    kappa_in = cfg.kernel
    alpha = kernel.reconstruct(kappa_in)
    fac = kernel.factorize(alpha, kappa_in.n)
    out.via_file("correlation.txt", lambda p: kernel.write_correlation(p, alpha))
    out.via_file("kernel.txt", lambda p: kernel.write_kernel(p, fac.kernel))
    rows = [[k, k * cfg.lattice.dt, float(z.real), float(z.imag), float(a.real), float(a.imag)]
            for k, (z, a) in enumerate(zip(fac.kernel.samples, alpha.samples))]
    out.table("factorization", ["index", "time", "re_kappa", "im_kappa", "re_alpha", "im_alpha"], rows)
    out.text("factorization_summary.json", json.dumps(
        {"residual": fac.residual, "window": fac.window,
         "config_factorization_residual": cfg.factorization_residual}, indent=1) + "\n")


def cmd_trajectory(cfg: ExperimentConfig, out: OutputWriter, args) -> None:
    model = cfg.model()
    traj = monitor.run_trajectory(model, cfg.run.steps, cfg.run.seed, cfg.initial)
    d = model.system.dim
    dt = cfg.lattice.dt
    rows = []
    for st in traj.states:
        xi = traj.record.bins[st.step - 1] if st.step else 0j
        rows.append([st.step, st.step * dt, float(xi.real), float(xi.imag), st.weight,
                     purity(st.rho)] + _rho_values(st.rho))
    out.table("trajectory", ["step", "time", "re_xi", "im_xi", "weight", "purity"] + _rho_columns(d),
              rows)
    out.via_file("record.txt", lambda p: monitor.write_record(p, traj.record))
    out.via_file("conditional_states.txt",
                 lambda p: monitor.write_conditional_states(p, traj.states))
    if len(traj.record) >= model.n_bins - 1:
        s = model.system.coupling
        retro_rows = []
        for r in monitor.retrodict_path(traj.record, model, cfg.initial):
            ev = r.expect(s)
            retro_rows.append([r.step, r.step * dt, r.horizon, float(ev.real), float(ev.imag)]
                              + _rho_values(r.psi))
        cols = ["step", "time", "horizon", "re_s", "im_s"]
        for i in range(d):
            cols += [f"re_psi_{i}", f"im_psi_{i}"]
        out.table("retrodicted", cols, retro_rows)


def cmd_ensemble(cfg: ExperimentConfig, out: OutputWriter, args) -> None:
    model = cfg.model()
    ens = monitor.run_ensemble(model, cfg.run.steps, cfg.run.trajectories, cfg.run.seed,
                               cfg.initial, workers=max(1, args.threads))
    ns = lattice.evolve_nonselective(model.system, model.kernel, model.config, cfg.run.steps,
                                     cfg.initial, model=model)
    se_td = ens.trace_distance_stderr()
    d = model.system.dim
    rows = []
    for step, (mean, se, ref) in enumerate(zip(ens.mean, ens.stderr, ns)):
        rows.append([step, step * cfg.lattice.dt, trace_distance(mean, ref), float(se_td[step])]
                    + _rho_values(mean) + [float(x) for x in se.ravel()])
    se_cols = [f"se_rho_{i}{j}" for i in range(d) for j in range(d)]
    out.table("ensemble", ["step", "time", "trace_distance_nonselective", "trace_distance_stderr"]
              + _rho_columns(d) + se_cols, rows)


def cmd_nonselective(cfg: ExperimentConfig, out: OutputWriter, args) -> None:
    model = cfg.model()
    rhos = lattice.evolve_nonselective(model.system, model.kernel, model.config, cfg.run.steps,
                                       cfg.initial, model=model)
    d = model.system.dim
    rows = [[n, n * cfg.lattice.dt] + [float(rho[i, i].real) for i in range(d)] + [purity(rho)]
            + _rho_values(rho) for n, rho in enumerate(rhos)]
    out.table("nonselective", ["step", "time"] + [f"pop_{i}" for i in range(d)] + ["purity"]
              + _rho_columns(d), rows)


def cmd_validate(cfg: ExperimentConfig, out: OutputWriter, args) -> bool:
    checks = validation.run_all(cfg.model(), cfg.initial, cfg.run.seed)
    rows = [[c.module, c.name, c.measured, c.tolerance, c.passed] for c in checks]
    out.table("validation", ["module", "check", "measured", "tolerance", "passed"], rows)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.module:8s} {c.name}: "
              f"{c.measured:.3e} (tol {c.tolerance:.1e})")
    return all(c.passed for c in checks)


COMMANDS = {
    "factorize": cmd_factorize,
    "trajectory": cmd_trajectory,
    "ensemble": cmd_ensemble,
    "nonselective": cmd_nonselective,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmmonitor",
                                     description="Monitored non-Markovian collision-model simulator")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="YAML experiment configuration")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default=None, help="override outputs.directory")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
    parser.add_argument("--format", choices=("csv", "json"), default=None,
                        help="override outputs.formats")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text).with_overrides(args.seed, args.out, args.format)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return 1

    started = time.time()
    try:
        out = OutputWriter(Path(cfg.outputs.directory), cfg.outputs.formats)
        log.info("running %s into %s", args.subcommand, cfg.outputs.directory)
        ok = COMMANDS[args.subcommand](cfg, out, args)
        manifest = {
            "subcommand": args.subcommand,
            "config_hash": cfg.digest(),
            "tool_version": __version__,
            "wall_clock_seconds": time.time() - started,
            "outputs": dict(sorted(out.checksums.items())),
        }
        out.text("manifest.json", json.dumps(manifest, indent=1) + "\n")
    except OSError as exc:
        print(f"IO error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, ArithmeticError, kernel.NotFactorizableError, monitor.InvalidStateError,
            monitor.InsufficientRecordError, DimensionCapError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure ({type(exc).__module__}.{type(exc).__name__}): {exc}",
              file=sys.stderr)
        return 2
    if ok is False:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
