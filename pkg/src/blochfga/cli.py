"""Command-line driver.

Subcommands: ``bands``, ``decompose``, ``propagate``, ``reference``,
``convergence`` and ``gauge-check``. Every subcommand writes CSV tables and
a JSON manifest into ``--out`` and exits with status 0 only if all cells
completed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import BlochFGAError
from .experiments import (
    ExperimentConfig,
    _lattice,
    _external,
    _propagator,
    _spectral_config,
    band_table_rows,
    build_initial_data,
    config_hash,
    load_config,
    run_convergence_study,
    run_decomposition_study,
    run_gauge_check,
)
from .spectral import solve_reference

logger = logging.getLogger("blochfga")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_manifest(out: Path, cfg: ExperimentConfig, command: str, extra: dict, started: float):
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "wall_time": time.perf_counter() - started,
        **extra,
    }
    (out / f"{cfg.name}_{command}_manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2))


def _resolve(args) -> ExperimentConfig:
    overrides = {}
    if args.eps:
        overrides["eps_list"] = [1.0 / float(e) if float(e) > 1 else float(e) for e in args.eps]
    return load_config(args.preset, args.config, overrides)


def cmd_bands(args, cfg, out):
    header, rows, table = band_table_rows(cfg, args.n_bands)
    _write_csv(out / f"{cfg.name}_bands.csv", header, rows)
    return {"min_gaps": table.min_gaps, "flagged": table.flagged}, True


def cmd_decompose(args, cfg, out):
    res = run_decomposition_study(cfg)
    _write_csv(out / f"{cfg.name}_decomposition.csv", ["epsilon", "N", "error"],
               [(r["eps"], r["N"], r["error"]) for r in res["rows"]])
    for r in res["rows"]:
        print(f"eps=1/{1 / r['eps']:.0f} N={r['N']} error={r['error']:.6g}")
    return {"cells": res["manifest"], "failures": res["failures"]}, not res["failures"]


def cmd_propagate(args, cfg, out):
    ok, cells = True, []
    for eps in cfg.eps_list:
        try:
            psi0 = build_initial_data(cfg, eps)
            prop = _propagator(cfg).set_params(record_history=bool(args.dump_trajectories)).fit(psi0)
            grid = _spectral_config(cfg, psi0, eps, args.threads).grid
            field = prop.field(grid)
            tag = f"{cfg.name}_eps{1 / eps:g}"
            field.to_csv(out / f"{tag}_fga.csv")
            if args.dump_trajectories:
                _dump_trajectories(out / f"{tag}_trajectories.csv", prop)
            cells.append({"eps": eps, **prop.manifest()})
        except BlochFGAError as exc:
            logger.error("eps=%g: %s", eps, exc)
            cells.append({"eps": eps, "error": repr(exc)})
            ok = False
    return {"cells": cells}, ok


def _dump_trajectories(path: Path, prop):
    ens = prop.ensemble_
    n_q, n_p = prop.mesh_.shape
    idx = ens.index
    n = idx // (n_q * n_p) + 1
    I = (idx // n_p) % n_q + 1
    J = idx % n_p + 1
    h = ens.history
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "I", "J", "t", "Q", "P", "S", "re_b", "im_b", "re_wilson", "im_wilson"])
        for k, t in enumerate(ens.times):
            block = np.column_stack([np.full(idx.size, t), h["Q"][k], h["P"][k], h["S"][k], h["b"][k].real,
                                     h["b"][k].imag, h["wilson"][k].real, h["wilson"][k].imag])
            for j in range(idx.size):
                w.writerow([n[j], I[j], J[j]] + [repr(float(v)) for v in block[j]])


def cmd_reference(args, cfg, out):
    lattice, U = _lattice(cfg), _external(cfg)
    cells, ok = [], True
    for eps in cfg.eps_list:
        try:
            psi0 = build_initial_data(cfg, eps)
            scfg = _spectral_config(cfg, psi0, eps, args.threads)
            res = solve_reference(psi0, float(cfg.T), scfg, lambda x, e=eps: lattice(x / e) + U(x))
            res.field.to_csv(out / f"{cfg.name}_eps{1 / eps:g}_reference.csv")
            cells.append({"eps": eps, "spectral": scfg.describe(), "steps": res.steps,
                          "self_convergence": res.self_convergence, "boundary_mass": res.boundary_mass})
        except BlochFGAError as exc:
            logger.error("eps=%g: %s", eps, exc)
            cells.append({"eps": eps, "error": repr(exc)})
            ok = False
    return {"cells": cells}, ok


def cmd_convergence(args, cfg, out):
    res = run_convergence_study(cfg, workers=args.threads)
    rows = []
    for r in res["rows"]:
        rows.append((r["eps"], r["error"], r.get("pairwise_rate", "")))
        print(f"eps=1/{1 / r['eps']:.0f} error={r['error']:.6g} rate={r.get('pairwise_rate', '')}")
    _write_csv(out / f"{cfg.name}_convergence.csv", ["epsilon", "error", "pairwise_rate"], rows)
    summary = res["summary"] or {}
    (out / f"{cfg.name}_convergence.json").write_text(json.dumps(_jsonable(
        {"lsq_slope": summary.get("lsq_slope"), "mean_rate": summary.get("mean_rate"),
         "rates": summary.get("rates"), "rows": res["rows"]}), indent=2))
    if summary:
        print(f"lsq_slope={summary['lsq_slope']:.4f} mean_rate={summary['mean_rate']:.4f}")
    return {"cells": res["manifest"], "failures": res["failures"]}, not res["failures"]


def cmd_gauge_check(args, cfg, out):
    res = run_gauge_check(cfg, seed=args.seed, workers=args.threads)
    _write_csv(out / f"{cfg.name}_gauge_check.csv", ["epsilon", "relative_discrepancy"],
               [(r["eps"], r["relative_discrepancy"]) for r in res["rows"]])
    for r in res["rows"]:
        print(f"eps=1/{1 / r['eps']:.0f} relative discrepancy={r['relative_discrepancy']:.3e}")
    return {"rows": res["rows"], "failures": res["failures"], "seed": args.seed}, not res["failures"]


COMMANDS = {
    "bands": cmd_bands,
    "decompose": cmd_decompose,
    "propagate": cmd_propagate,
    "reference": cmd_reference,
    "convergence": cmd_convergence,
    "gauge-check": cmd_gauge_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file; merged over the preset")
    common.add_argument("--preset", choices=["ex2", "ex3", "ex4", "ex5", "ex6", "ex7"])
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("--seed", type=int, default=0, help="seed for random rephasing")
    common.add_argument("--eps", nargs="+", help="override eps list (values > 1 are read as 1/value)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="blochfga", description="Frozen Gaussian propagation in periodic media")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("bands", parents=[common], help="tabulate Bloch bands")
    b.add_argument("--n-bands", type=int, default=None)
    sub.add_parser("decompose", parents=[common], help="initial decomposition error table")
    pr = sub.add_parser("propagate", parents=[common], help="propagate and dump the field")
    pr.add_argument("--dump-trajectories", action="store_true")
    sub.add_parser("reference", parents=[common], help="Strang reference solution")
    sub.add_parser("convergence", parents=[common], help="FGA versus reference error table")
    sub.add_parser("gauge-check", parents=[common], help="rerun with randomly rephased Bloch vectors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.preset is None and args.config is None:
        print("error: give --preset or --config", file=sys.stderr)
        return 2
    started = time.perf_counter()
    try:
        cfg = _resolve(args)
    except BlochFGAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra, ok = COMMANDS[args.command](args, cfg, out)
    _write_manifest(out, cfg, args.command, extra, started)
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
