"""Command-line front end.

    groupcombss fit          one penalty level on CSV data
    groupcombss path         solution path over a penalty grid
    groupcombss simulate     replicated simulation study with metrics
    groupcombss oracle-check compare against exhaustive search on small instances
    groupcombss rerun        repeat a run from its manifest

Exit codes: 0 success, 2 usage error, 3 data error, 4 solver error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as gio
from .design import exhaustive_group_oracle
from .errors import CombssError, DomainError, IngestionError, SizeError
from .optimizer import AdamConfig, run_group_combss
from .path import make_lambda_grid, select_lambda, solve_path
from .simulate import (
    PathConfig,
    SimulationSetting,
    generate_dataset,
    benchmark_setting,
    run_setting,
)

logger = logging.getLogger("groupcombss")

EXIT_USAGE = 2


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    d = AdamConfig()
    p.add_argument("--gamma", type=float, default=0.0, help="ridge strength (default 0)")
    p.add_argument("--tau", type=float, default=0.5, help="selection threshold on t")
    p.add_argument("--w0", default="0", help="initial weights: one number or a comma list")
    p.add_argument("--adam-lr", type=float, default=d.learning_rate)
    p.add_argument("--adam-beta1", type=float, default=d.beta1)
    p.add_argument("--adam-beta2", type=float, default=d.beta2)
    p.add_argument("--adam-eps", type=float, default=d.epsilon)
    p.add_argument("--max-iter", type=int, default=d.max_iterations)
    p.add_argument("--tol", type=float, default=d.convergence_tol)
    p.add_argument("--patience", type=int, default=d.patience)


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    defaults = PathConfig()
    p.add_argument("--grid-count", type=int, default=defaults.grid_count)
    p.add_argument("--grid-min-ratio", type=float, default=defaults.grid_min_ratio)
    p.add_argument("--grid-spacing", choices=("geometric", "linear"), default=defaults.spacing)
    ws = p.add_mutually_exclusive_group()
    ws.add_argument("--warm-start", dest="warm_start", action="store_true")
    ws.add_argument("--cold-start", dest="warm_start", action="store_false")
    p.set_defaults(warm_start=defaults.warm_start)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--design", required=True, help="CSV design matrix")
    p.add_argument("--response", required=True, help="CSV response column")
    p.add_argument("--groups", required=True, help="CSV group sizes or column->group map")
    p.add_argument("--standardize", action="store_true",
                   help="center and scale design columns to unit variance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupcombss", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run Group COMBSS at one lambda")
    _add_data_flags(fit)
    fit.add_argument("--lambda", dest="lam", type=float, required=True)
    _add_solver_flags(fit)
    fit.add_argument("--out-dir", required=True)

    path = sub.add_parser("path", help="solution path over a lambda grid")
    _add_data_flags(path)
    _add_grid_flags(path)
    _add_solver_flags(path)
    path.add_argument("--val-design", help="validation design CSV for choosing lambda")
    path.add_argument("--val-response", help="validation response CSV")
    path.add_argument("--threads", type=int, default=1)
    path.add_argument("--out-dir", required=True)

    sim = sub.add_parser("simulate", help="replicated simulation study")
    sim.add_argument("--setting", type=int, choices=(1, 2, 3, 4), required=True)
    sim.add_argument("--snr", type=float, required=True)
    sim.add_argument("--replicates", type=int, default=50)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--n", type=int, help="override the number of observations")
    sim.add_argument("--p", type=int, help="override the number of predictors")
    sim.add_argument("--group-size", type=int, help="override the uniform group size")
    sim.add_argument("--k", type=int, help="override the number of planted groups")
    sim.add_argument("--rho", type=float, help="override the within-group correlation")
    sim.add_argument("--psi", type=float, help="override the between-group correlation")
    sim.add_argument("--planted-rule", choices=("first_k", "random_k"), default="first_k")
    sim.add_argument("--n-validation", type=int,
                     help="validation rows per replicate (default 10 x n)")
    _add_grid_flags(sim)
    _add_solver_flags(sim)
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--out-dir", required=True)

    orc = sub.add_parser("oracle-check", help="agreement with exhaustive search")
    orc.add_argument("--n", type=int, default=100)
    orc.add_argument("--J", type=int, default=6)
    orc.add_argument("--group-size", type=int, default=4)
    orc.add_argument("--k", type=int, default=2)
    orc.add_argument("--rho", type=float, default=0.9)
    orc.add_argument("--psi", type=float, default=0.2)
    orc.add_argument("--snr", type=float, default=10.0)
    orc.add_argument("--replicates", type=int, default=1)
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--n-validation", type=int,
                     help="validation rows per replicate (default 10 x n)")
    _add_grid_flags(orc)
    _add_solver_flags(orc)
    orc.add_argument("--out-dir", required=True)

    rerun = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    rerun.add_argument("manifest")
    rerun.add_argument("--out-dir", required=True)
    return parser


def _adam_config(args) -> AdamConfig:
    return AdamConfig(
        learning_rate=args.adam_lr,
        beta1=args.adam_beta1,
        beta2=args.adam_beta2,
        epsilon=args.adam_eps,
        max_iterations=args.max_iter,
        convergence_tol=args.tol,
        patience=args.patience,
    )


def _w0(args, J: int) -> np.ndarray:
    parts = [float(x) for x in str(args.w0).split(",")]
    if len(parts) == 1:
        return np.full(J, parts[0])
    if len(parts) != J:
        raise SizeError(f"--w0 has {len(parts)} entries but the design has {J} groups")
    return np.array(parts)


def _path_config(args) -> PathConfig:
    return PathConfig(
        grid_count=args.grid_count,
        grid_min_ratio=args.grid_min_ratio,
        spacing=args.grid_spacing,
        gamma=args.gamma,
        tau=args.tau,
        warm_start=args.warm_start,
        adam=_adam_config(args),
    )


def _ingest(args):
    return gio.ingest(args.design, args.response, args.groups, args.standardize)


def cmd_fit(args, out: Path) -> dict:
    timings = {}
    t0 = time.perf_counter()
    data = _ingest(args)
    timings["ingest"] = time.perf_counter() - t0
    design = data.design
    t0 = time.perf_counter()
    res = run_group_combss(design, args.lam, args.gamma, args.tau,
                           _w0(args, design.n_groups), _adam_config(args))
    timings["solve"] = time.perf_counter() - t0
    doc = gio.result_to_dict(res)
    doc["group_labels"] = data.group_labels
    doc["selected_groups"] = [lab for lab, s in zip(data.group_labels, res.selection) if s]
    doc["columns"] = data.manifest_entry()
    if res.refit_coefficients is not None:
        doc["refit_coefficients_original_order"] = gio.restore_column_order(
            res.refit_coefficients, data.column_order).tolist()
    gio.write_json(doc, out / "result.json")
    return {"timings": timings, "inputs": data.input_hashes,
            "outputs": ["result.json"]}


def cmd_path(args, out: Path) -> dict:
    timings = {}
    t0 = time.perf_counter()
    data = _ingest(args)
    design = data.design
    timings["ingest"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    grid = make_lambda_grid(design, args.grid_count, args.grid_spacing, args.grid_min_ratio,
                            args.gamma)
    path = solve_path(design, grid, args.gamma, args.tau, _adam_config(args), args.warm_start,
                      _w0(args, design.n_groups), threads=args.threads)
    timings["path"] = time.perf_counter() - t0
    path.metadata["group_labels"] = data.group_labels
    path.metadata["columns"] = data.manifest_entry()
    inputs = dict(data.input_hashes)
    if args.val_design or args.val_response:
        if not (args.val_design and args.val_response):
            raise SizeError("--val-design and --val-response must be given together")
        val = _validation_design(args, data)
        lam_star, selection = select_lambda(path, val)
        path.metadata["lambda_star"] = lam_star
        path.metadata["selected_groups"] = [
            lab for lab, s in zip(data.group_labels, selection) if s]
        inputs["val_design"] = gio.file_sha256(args.val_design)
        inputs["val_response"] = gio.file_sha256(args.val_response)
    gio.save_path(path, out / "path.json")
    gio.write_path_csv(path, out / "path_long.csv", data.group_labels)
    return {"timings": timings, "inputs": inputs,
            "outputs": ["path.json", "path_long.csv"]}


def _validation_design(args, train):
    """Apply the training column order and scaling to the validation files."""
    from .design import GroupedDesign

    raw_x, header = gio._read_table(args.val_design, "validation design")
    X = gio._to_numeric(raw_x, "validation design", 1 if header else 0)
    raw_y, yheader = gio._read_table(args.val_response, "validation response")
    y = gio._to_numeric(raw_y, "validation response", 1 if yheader else 0)[:, 0]
    if X.shape[1] != train.design.p:
        raise IngestionError("validation design has a different number of columns")
    if y.shape[0] != X.shape[0]:
        raise IngestionError("validation response and design row counts differ")
    X = X[:, train.column_order]
    if train.standardized:
        X = (X - np.asarray(train.x_center)) / np.asarray(train.x_scale)
    return GroupedDesign(X, y - train.y_mean, train.design.group_sizes)


def _setting_from_args(args) -> SimulationSetting:
    base = benchmark_setting(args.setting, args.snr, replicates=args.replicates, seed=args.seed,
                         planted_rule=args.planted_rule)
    n = args.n or base.n
    group_size = args.group_size or base.group_sizes[0]
    p = args.p or base.p
    if p % group_size:
        raise SizeError("--p must be a multiple of the group size")
    return SimulationSetting(
        n=n,
        group_sizes=(group_size,) * (p // group_size),
        rho=base.rho if args.rho is None else args.rho,
        psi=base.psi if args.psi is None else args.psi,
        k_true=base.k_true if args.k is None else args.k,
        snr=args.snr,
        replicates=args.replicates,
        seed=args.seed,
        planted_rule=args.planted_rule,
        n_validation=args.n_validation,
    )


def cmd_simulate(args, out: Path) -> dict:
    setting = _setting_from_args(args)
    config = _path_config(args)
    t0 = time.perf_counter()
    report = run_setting(setting, config, threads=args.threads)
    timings = {"simulate": time.perf_counter() - t0}
    gio.write_json(gio.report_to_dict(report), out / "report.json")
    # published rows only make sense next to an unmodified benchmark setting
    overridden = any(getattr(args, k) is not None
                     for k in ("n", "p", "group_size", "k", "rho", "psi"))
    gio.write_csv(gio.report_rows(report, args.setting, args.snr,
                                  include_reference=not overridden),
                  gio.REPORT_HEADER, out / "report.csv")
    gio.write_csv(gio.replicate_rows(report), gio.REPLICATE_HEADER, out / "replicates.csv")
    summary = report.summary()
    print("metric     mean      se")
    for m in ("mcc", "precision", "recall", "risk"):
        print(f"{m:<9} {summary[m]['mean']:8.4f} {summary[m]['se']:8.4f}")
    return {"timings": timings, "inputs": {},
            "outputs": ["report.json", "report.csv", "replicates.csv"]}


def cmd_oracle_check(args, out: Path) -> dict:
    setting = SimulationSetting(args.n, (args.group_size,) * args.J, args.rho, args.psi,
                                args.k, args.snr, replicates=args.replicates, seed=args.seed,
                                n_validation=args.n_validation)
    config = _path_config(args)
    t0 = time.perf_counter()
    records = []
    for i in range(setting.replicates):
        data = generate_dataset(setting, i)
        grid = make_lambda_grid(data.train, config.grid_count, config.spacing,
                                config.grid_min_ratio, config.gamma)
        path = solve_path(data.train, grid, config.gamma, config.tau, config.adam,
                          config.warm_start, _w0(args, setting.J))
        _, selection = select_lambda(path, data.validation)
        oracle = exhaustive_group_oracle(data.train, args.k, config.gamma)
        records.append({
            "replicate": i,
            "combss": selection.tolist(),
            "oracle": oracle.tolist(),
            "truth": data.support.tolist(),
            "agree": bool(np.array_equal(selection, oracle)),
        })
    timings = {"oracle_check": time.perf_counter() - t0}
    agree = sum(r["agree"] for r in records)
    doc = {
        "schema_version": gio.SCHEMA_VERSION,
        "kind": "oracle_check",
        "setting": setting.to_dict(),
        "agreement": agree,
        "replicates": len(records),
        "all_agree": agree == len(records),
        "records": records,
    }
    gio.write_json(doc, out / "oracle_check.json")
    print(f"agreement: {agree}/{len(records)}")
    return {"timings": timings, "inputs": {}, "outputs": ["oracle_check.json"]}


COMMANDS = {
    "fit": cmd_fit,
    "path": cmd_path,
    "simulate": cmd_simulate,
    "oracle-check": cmd_oracle_check,
}


def _run(args) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k not in ("out_dir", "verbose")}
    info = COMMANDS[args.command](args, out)
    hashes = {name: gio.file_sha256(out / name) for name in info["outputs"]}
    manifest = gio.make_manifest(args.command, resolved, info["inputs"], info["timings"],
                                 hashes)
    gio.write_json(manifest, out / "manifest.json")


def cmd_rerun(args) -> None:
    manifest = gio.read_json(args.manifest)
    if manifest.get("kind") != "run_manifest":
        raise IngestionError(f"{args.manifest} is not a run manifest")
    config = dict(manifest["config"])
    for key in ("design", "response", "groups", "val_design", "val_response"):
        path = config.get(key)
        expected = manifest["input_hashes"].get(key)
        if path and expected and gio.file_sha256(path) != expected:
            raise IngestionError(f"input {path} no longer matches the manifest hash")
    ns = argparse.Namespace(**config, out_dir=args.out_dir, verbose=args.verbose)
    _run(ns)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            cmd_rerun(args)
        else:
            _run(args)
    except DomainError as exc:
        # out-of-range parameters can only arrive through flags here
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return EXIT_USAGE
    except CombssError as exc:
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(json.dumps({"error": "usage_error", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
