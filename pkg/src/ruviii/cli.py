"""Command-line interface: ``ruviii adjust | kscan | prps | simulate``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
Tolerance defaults can be overridden with the environment variables
``RUVIII_EIGEN_TOL``, ``RUVIII_RCOND_MIN``, ``RUVIII_ZERO_THRESHOLD`` and
the worker count with ``RUVIII_THREADS``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .estimator import RCOND_MIN, fit, k_max, k_scan
from .io import (
    read_annotation,
    read_controls,
    read_mapping,
    read_matrix,
    write_csv,
    write_json,
    write_mapping,
    write_matrix,
)
from .model import Dataset, MappingMatrix
from .projections import EIGEN_RESIDUAL_TOL
from .prps import B1_CAP, B2_CAP, MIN_GROUP_SIZE, build_prps_plan, extend_dataset, fast_fit
from .simulate import (
    DISTRIBUTIONS,
    NC_RULES,
    REPLICATIONS,
    SimScenario,
    TrendSpec,
    run_grid,
)

log = logging.getLogger("ruviii")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _env_float(name, default):
    val = os.environ.get(name)
    return float(val) if val not in (None, "") else default


def _add_tolerances(p):
    p.add_argument("--eigen-tol", type=float, default=_env_float("RUVIII_EIGEN_TOL", EIGEN_RESIDUAL_TOL),
                   help="eigenpair residual tolerance (default %(default)g)")
    p.add_argument("--rcond-min", type=float, default=_env_float("RUVIII_RCOND_MIN", RCOND_MIN),
                   help="reciprocal condition guard for the k x k solve (default %(default)g)")
    p.add_argument("--zero-threshold", type=float, default=_env_float("RUVIII_ZERO_THRESHOLD", None),
                   help="eigenvalues at or below this count as zero (default m*eps*lambda_max)")


def _add_inputs(p, mapping_required=True):
    p.add_argument("--matrix", required=True, help="assay x variable TSV")
    p.add_argument("--mapping", required=mapping_required, help="CSV with assay_id,sample_id")
    p.add_argument("--controls", required=True, help="negative-control variable ids, one per line")
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="ruviii", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("adjust", help="remove unwanted variation")
    _add_inputs(p)
    p.add_argument("-k", type=int, default=None, help="number of factors (default m - s)")
    _add_tolerances(p)

    p = sub.add_parser("kscan", help="removed-component norm for k = 1..K")
    _add_inputs(p)
    p.add_argument("-K", type=int, default=None, help="scan bound (default m - s)")
    _add_tolerances(p)

    p = sub.add_parser("prps", help="build pseudo-replicates of pseudo-samples")
    _add_inputs(p, mapping_required=False)
    p.add_argument("--annotation", required=True, help="CSV with assay_id,biology,unwanted")
    p.add_argument("--min-group-size", type=int, default=MIN_GROUP_SIZE)
    p.add_argument("--b1", type=int, default=B1_CAP, help="max assays per pseudo-sample")
    p.add_argument("--b2", type=int, default=B2_CAP, help="max pseudo-samples per assay")
    p.add_argument("--adjust", action="store_true", help="also run RUV-III on the extended data")
    p.add_argument("-k", type=int, default=None, help="factors for --adjust (default m_r - s_r)")
    p.add_argument("--keep-pseudo", action="store_true", help="keep pseudo-assay rows in adjusted.tsv")
    _add_tolerances(p)

    p = sub.add_parser("simulate", help="run a simulation grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=int(os.environ.get("RUVIII_THREADS", "1") or 1))
    p.add_argument("--full-grid", action="store_true",
                   help="default to m = 16..512 with 100 reps instead of the desk-scale 16..256 with 20")
    return parser


def _load_dataset(args, matrix=None, mapping=None):
    if matrix is None:
        matrix = read_matrix(args.matrix)
    if mapping is None:
        mapping = read_mapping(args.mapping, matrix.assay_ids)
    controls = read_controls(args.controls, matrix.variable_ids)
    return Dataset(matrix, mapping, controls)


def _write_fit(out, f, d, row_ids, keep_rows=None):
    factor_ids = [f"W{j + 1}" for j in range(f.rank)]
    adjusted = f.adjusted if keep_rows is None else f.adjusted[keep_rows]
    ids = list(row_ids) if keep_rows is None else [row_ids[i] for i in keep_rows]
    write_matrix(out / "adjusted.tsv", adjusted, ids, d.matrix.variable_ids)
    write_matrix(out / "w_hat.tsv", f.w_hat, list(row_ids), factor_ids)
    write_matrix(out / "alpha_hat.tsv", f.alpha_hat, factor_ids, d.matrix.variable_ids, corner="factor")


def _manifest(command, d, f, k_source, args):
    return {
        "command": command,
        "version": __version__,
        "m": d.shape[0],
        "n": d.shape[1],
        "s": d.mapping.s,
        "n_c": d.controls.n_c,
        "k": f.k,
        "k_source": k_source,
        "rank_used": f.rank,
        "eigenvalues": [float(v) for v in f.eigen.values],
        "zero_threshold": f.eigen.zero_threshold,
        "rcond": f.rcond,
        "tolerances": {
            "eigen_tol": args.eigen_tol,
            "rcond_min": args.rcond_min,
            "zero_threshold": args.zero_threshold,
        },
    }


def cmd_adjust(args):
    d = _load_dataset(args)
    k = args.k if args.k is not None else k_max(d.mapping)
    f = fit(d, k, zero_threshold=args.zero_threshold, residual_tol=args.eigen_tol, rcond_min=args.rcond_min)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_fit(out, f, d, d.matrix.assay_ids)
    write_json(out / "manifest.json", _manifest("adjust", d, f, "user" if args.k is not None else "m-s", args))
    print(f"adjusted {d.shape[0]}x{d.shape[1]} matrix with k={k}")


def cmd_kscan(args):
    d = _load_dataset(args)
    res = k_scan(d, args.K, zero_threshold=args.zero_threshold, rcond_min=args.rcond_min)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "kscan.csv",
        ["k", "norm_sq", "status"],
        ((k + 1, float(v) if np.isfinite(v) else "", st) for k, (v, st) in enumerate(zip(res.norms_sq, res.status))),
    )
    print(f"k_hat={res.k_hat}")


def cmd_prps(args):
    matrix = read_matrix(args.matrix)
    if args.mapping:
        mapping = read_mapping(args.mapping, matrix.assay_ids)
    else:
        mapping = MappingMatrix.identity(matrix.shape[0], matrix.assay_ids)
    d0 = _load_dataset(args, matrix, mapping)
    bio, unw = read_annotation(args.annotation, matrix.assay_ids)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            plan = build_prps_plan(bio, unw, args.min_group_size, args.b1, args.b2)
        finally:
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
    e = extend_dataset(d0, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "prps_plan.txt").write_text(plan.to_text(), encoding="utf-8")
    ed = e.dataset
    write_matrix(out / "extended.tsv", ed.Y, ed.matrix.assay_ids, ed.matrix.variable_ids)
    write_mapping(out / "extended_mapping.csv", ed.mapping)
    print(f"{plan.m_pa} pseudo-samples in {plan.s_pr} pseudo-replicate sets")
    if args.adjust:
        k = args.k if args.k is not None else e.m_r - e.s_r
        f = fast_fit(e, k, zero_threshold=args.zero_threshold, residual_tol=args.eigen_tol, rcond_min=args.rcond_min)
        keep = None if args.keep_pseudo else list(range(e.m_pa, ed.shape[0]))
        _write_fit(out, f, ed, ed.matrix.assay_ids, keep)
        write_json(out / "manifest.json", _manifest("prps", ed, f, "user" if args.k is not None else "m-s", args))
        print(f"adjusted with k={k}")


SIM_KEYS = {
    "m_values": list,
    "reps": int,
    "seed": int,
    "nc_rule": str,
    "replication": str,
    "distribution": str,
    "k0": int,
    "k_choice": (int, str),
    "mu": bool,
    "signal_dim": int,
    "trend": (dict, type(None)),
    "workers": int,
}

SIM_DEFAULTS = {
    "m_values": [16, 32, 64, 128, 256],
    "reps": 20,
    "seed": 0,
    "nc_rule": "m2/8",
    "replication": "samples_increasing",
    "distribution": "normal",
    "k0": 3,
    "k_choice": 3,
    "mu": False,
    "signal_dim": 0,
    "trend": None,
}


FULL_GRID = {"m_values": [16, 32, 64, 128, 256, 512], "reps": 100}


def parse_sim_config(obj, full_grid=False):
    """Validate a simulation config; every problem is reported at once."""
    problems = []
    if not isinstance(obj, dict):
        raise ValidationError("config must be a JSON object")
    for key in obj:
        if key not in SIM_KEYS:
            problems.append(f"unknown key {key!r}")
    cfg = dict(SIM_DEFAULTS, **(FULL_GRID if full_grid else {}), **obj)
    for key, typ in SIM_KEYS.items():
        if key in cfg and not isinstance(cfg[key], typ) or (typ is int and isinstance(cfg.get(key), bool)):
            problems.append(f"{key}: expected {getattr(typ, '__name__', typ)}, got {type(cfg[key]).__name__}")
    if cfg["nc_rule"] not in NC_RULES:
        problems.append(f"nc_rule: {cfg['nc_rule']!r} not one of {list(NC_RULES)}")
    if cfg["replication"] not in REPLICATIONS:
        problems.append(f"replication: {cfg['replication']!r} not one of {list(REPLICATIONS)}")
    if cfg["distribution"] not in DISTRIBUTIONS:
        problems.append(f"distribution: {cfg['distribution']!r} not one of {list(DISTRIBUTIONS)}")
    if isinstance(cfg["k_choice"], str) and cfg["k_choice"] != "max":
        problems.append("k_choice: string value must be 'max'")
    if isinstance(cfg["m_values"], list):
        bad = [m for m in cfg["m_values"] if not isinstance(m, int) or m < 4 or m % 4]
        if bad or not cfg["m_values"]:
            problems.append(f"m_values: need positive multiples of 4, got {cfg['m_values']}")
    if isinstance(cfg["reps"], int) and cfg["reps"] < 2:
        problems.append("reps: must be at least 2")
    if isinstance(cfg["trend"], dict):
        extra = set(cfg["trend"]) - {"segments"}
        if extra:
            problems.append(f"trend: unknown keys {sorted(extra)}")
    if problems:
        raise ValidationError(problems)
    trend = TrendSpec(**cfg["trend"]) if cfg["trend"] is not None else None
    template = SimScenario(
        m=cfg["m_values"][0],
        nc_rule=cfg["nc_rule"],
        replication=cfg["replication"],
        distribution=cfg["distribution"],
        k0=cfg["k0"],
        k_choice=cfg["k_choice"],
        mu=cfg["mu"],
        signal_dim=cfg["signal_dim"],
        trend=trend,
        seed=cfg["seed"],
    )
    return template, cfg


def cmd_simulate(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    template, cfg = parse_sim_config(obj, args.full_grid)
    workers = cfg.get("workers", args.workers)
    res = run_grid(template, cfg["m_values"], cfg["reps"], workers=workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "qtable.csv", ["m", "rep", "q"], res.q_rows())
    write_csv(
        out / "summary.csv",
        ["m", "mean_q", "se"],
        zip(res.m_values, map(float, res.mean_q), map(float, res.se_q)),
    )
    if any(res.failures):
        print(f"warning: failed fits per m: {dict(zip(res.m_values, res.failures))}", file=sys.stderr)
    if len(res.m_values) >= 2:
        slope, se = res.slope()
        (out / "slope.txt").write_text(f"slope\tse\n{slope:.17g}\t{se:.17g}\n", encoding="utf-8")
        print(f"slope {slope:.3f} +/- {se:.3f}")


COMMANDS = {"adjust": cmd_adjust, "kscan": cmd_kscan, "prps": cmd_prps, "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
