"""Command line entry point: ``qjumps {master,trajectories,escape,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical-invariant failure.
Every command writes the effective configuration and a JSON manifest next to
its CSV outputs.  Floats are written with 17 significant digits, so the same
configuration and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__, config as cfgmod
from . import qstate
from .doubleslit import (central_visibility, count_maxima, escape_probability,
                         unnormalized_survival, verify_decay_bound)
from .ensemble import EnsembleConfig, exponential_ks, run_ensemble
from .exceptions import (ConfigurationError, EnsembleError, ModeUnsupportedError,
                         NumericalConsistencyError, QJumpsError, StructuralError)
from .lindblad import DENSE_LIMIT, apply_generator, integrate_master

log = logging.getLogger("qjumps")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _g(x) -> str:
    return f"{float(x):.17g}"


class _Writer:
    """Writes output files and remembers their digests for the manifest."""

    def __init__(self, directory):
        self.directory = directory
        self.files = {}
        os.makedirs(directory, exist_ok=True)

    def write(self, name, text):
        path = os.path.join(self.directory, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def manifest(self, command, cfg, extra=None):
        doc = {
            "command": command,
            "config_sha256": cfgmod.config_hash(cfg),
            "master_seed": cfg.ensemble.master_seed,
            "versions": {"qjumps": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "files": dict(sorted(self.files.items())),
        }
        if extra:
            doc["results"] = extra
        self.write("manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _setup(args):
    if args.config:
        cfg = cfgmod.load(args.config)
    else:
        cfg = cfgmod.preset(args.preset)
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, directory=args.out)
    out = _Writer(cfg.output.directory)
    out.write("effective_config.ini", cfgmod.dumps(cfg))
    return cfg, cfgmod.build_model(cfg), out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_master(args) -> int:
    cfg, built, out = _setup(args)
    gen = built.generator
    if gen.dim > DENSE_LIMIT:
        raise ConfigurationError(
            f"master integration needs dim <= {DENSE_LIMIT}, this model has {gen.dim}; "
            "use the 'trajectories' command for large systems")
    d = cfg.dynamics
    every = max(1, int(round(d.snapshot_interval / d.dt)))
    rho0 = np.outer(built.psi0, built.psi0.conj())
    traj = integrate_master(gen, rho0, d.dt, d.horizon, snapshot_every=every)
    bins = list(built.bins)
    lines = ["time,observable,value"]
    for t, rho in zip(traj.times, traj.states):
        diag = np.real(np.diagonal(rho))
        lines.append(f"{_g(t)},trace,{_g(np.trace(rho).real)}")
        for i, lab in enumerate(bins):
            lines.append(f"{_g(t)},population_{i},{_g(diag[lab])}")
        lines.append(f"{_g(t)},unabsorbed,{_g(1.0 - diag[bins].sum())}")
    out.write("master_observables.csv", "\n".join(lines) + "\n")
    final = np.real(np.diagonal(traj.states[-1]))[bins]
    rows = ["pixel_index,pixel_row,population"]
    rows += [f"{i},{r},{_g(p)}" for i, (r, p) in enumerate(zip(built.rows, final))]
    out.write("pixel_populations.csv", "\n".join(rows) + "\n")
    summary = {"trace_drift": _g(traj.trace_drift), "min_eigenvalue": _g(traj.min_eigenvalue),
               "interior_maxima": count_maxima(final) if len(final) > 2 else 0,
               "central_visibility": _g(central_visibility(final)) if len(final) > 2 else None}
    out.manifest("master", cfg, summary)
    print(f"master: {len(traj.times)} snapshots, trace drift {traj.trace_drift:.3e}, "
          f"populations written to {out.directory}")
    return EXIT_OK


def cmd_trajectories(args) -> int:
    cfg, built, out = _setup(args)
    e = cfg.ensemble
    ecfg = EnsembleConfig(e.n_trajectories, e.master_seed, cfgmod.sampler_mode(cfg),
                          cfg.dynamics.horizon, e.snapshot_times, e.workers,
                          keep_records=e.keep_records or "records" in cfg.output.formats)
    res = run_ensemble(built.generator, built.psi0, ecfg, bins=built.bins, rows=built.rows)
    out.write("histogram.csv", res.histogram.to_csv())
    if e.snapshot_times:
        out.write("observables.csv", res.observables_csv())
    if res.records is not None:
        out.write("records.txt", "".join(r.to_text() for r in res.records))
    extra = {"survived": res.histogram.survived, "n_trajectories": res.histogram.total}
    if cfg.model.kind == "two_level" and cfg.model.pauli_z == 0 and cfg.model.initial_state == "0":
        ks = exponential_ks(res.jump_times, cfg.model.alpha)
        out.write("ks_report.csv", f"quantity,value\nks_statistic,{_g(ks)}\n"
                                   f"n,{res.histogram.total}\nrate,{_g(cfg.model.alpha)}\n")
        extra["ks_statistic"] = _g(ks)
    out.manifest("trajectories", cfg, extra)
    print(f"trajectories: {res.histogram.total} runs, {res.histogram.survived} survived; "
          f"outputs in {out.directory}")
    return EXIT_OK


def cmd_escape(args) -> int:
    cfg, built, out = _setup(args)
    d = cfg.dynamics
    curve = escape_probability(built.generator, built.psi0, d.ode_dt, d.t_max,
                               snapshot_every=max(1, int(round(d.snapshot_interval / d.ode_dt))),
                               check_stability=True)
    lines = ["time,survival"] + [f"{_g(t)},{_g(p)}" for t, p in zip(curve.times, curve.survival)]
    out.write("escape_curve.csv", "\n".join(lines) + "\n")
    direct = unnormalized_survival(built.generator, built.psi0, d.ode_dt, d.t_max)
    summary = {"p_esc": _g(curve.p_esc), "stability_tmax_2tmax": _g(curve.stability),
               "unnormalized_survival": _g(direct)}
    out.write("escape_summary.csv", "quantity,value\n" +
              "".join(f"{k},{v}\n" for k, v in summary.items()))
    out.manifest("escape", cfg, summary)
    print(f"escape: p_esc ~ {curve.p_esc:.6g} (p(T) - p(2T) = {curve.stability:.3e})")
    return EXIT_OK


def _absmax(x) -> float:
    """Largest absolute entry of a dense or sparse array (0 when empty)."""
    x = abs(x)
    if getattr(x, "nnz", None) == 0 or np.size(x) == 0:
        return 0.0
    return float(x.max())


def _check(name, ok, residual):
    print(f"{'PASS' if ok else 'FAIL'} {name} residual={residual:.3e}")
    return ok


def cmd_validate(args) -> int:
    cfg, built, out = _setup(args)
    gen = built.generator
    results = []
    h = gen.hamiltonian
    results.append(_check("hamiltonian_hermitian", True, qstate.hermitian_residual(h)))
    if built.cavity is not None:
        model = built.cavity
        rows = verify_decay_bound(model.geometry, model.pixels, raise_on_failure=False)
        worst = max(r.norm - r.bound for r in rows)
        results.append(_check("decay_bound", all(r.ok for r in rows), max(worst, 0.0)))
        p_grid = model.grid_projector()
        p_bound = model.bound_projector()
        block = 0.0
        for t in model.jump_ops:
            block = max(block, _absmax(t @ p_bound), _absmax(p_grid @ t))
        results.append(_check("block_structure", block == 0.0, block))
        dead = model.geometry.dirichlet_mask()
        diag = _absmax(model.h_el.diagonal()[dead])
        rows_off = _absmax(model.h_el[dead])
        results.append(_check("dirichlet_rows_zero", diag == 0.0 and rows_off == 0.0,
                              max(diag, rows_off)))
        if gen.dim <= DENSE_LIMIT:
            stat = 0.0
            for s in range(model.n_pixels):
                q = np.zeros((gen.dim, gen.dim), dtype=complex)
                q[model.n_grid + s, model.n_grid + s] = 1.0
                stat = max(stat, float(np.abs(apply_generator(gen, q)).max()))
            results.append(_check("pixel_states_stationary", stat <= 1e-14, stat))
        norm = np.linalg.norm(built.psi0[model.n_grid:])
        results.append(_check("initial_state_in_grid_block", norm == 0.0, norm))
    psd = 0.0
    if gen.dim <= DENSE_LIMIT:
        psd = max(0.0, -float(np.linalg.eigvalsh(gen.decay_matrix())[0]))
    results.append(_check("decay_operator_psd", psd <= 1e-10, psd))
    lines = ["check,passed"] + [f"{i},{'true' if ok else 'false'}" for i, ok in enumerate(results)]
    out.write("validate.csv", "\n".join(lines) + "\n")
    out.manifest("validate", cfg, {"passed": int(sum(results)), "total": len(results)})
    return EXIT_OK if all(results) else EXIT_NUMERIC


COMMANDS = {"master": cmd_master, "trajectories": cmd_trajectories,
            "escape": cmd_escape, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qjumps", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"qjumps {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="configuration file (INI)")
        p.add_argument("--preset", default="double_slit",
                       help="built-in configuration when --config is absent "
                            "(double_slit, double_slit_large, two_level)")
        p.add_argument("--seed", type=int, help="override ensemble.master_seed")
        p.add_argument("--workers", type=int, help="override ensemble.workers")
        p.add_argument("--out", help="override output.directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalConsistencyError, StructuralError, ModeUnsupportedError,
            EnsembleError) as exc:
        print(f"numerical invariant failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QJumpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":          # pragma: no cover
    sys.exit(main())
