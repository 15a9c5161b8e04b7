"""Command-line interface: ``mmmi <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .core import ConfigError, DataError, GridError, MmmiError, NestedEstimateGrid, ScalarEstimate
from .engine import nested_impute
from .formats import (
    PlanModel,
    SchemaModel,
    SimulationModel,
    dataset_csv_text,
    dump_json,
    estimates_csv_text,
    format_table,
    load_json,
    parse_model,
    read_dataset_csv,
    read_estimates_csv,
    report_csv_text,
    report_table,
    schema_from_columns,
    to_distribution,
)
from .harness import GRID_NAMES, ScenarioConfig, run_grid, standard_grid, with_mechanism
from .lmm import LmmSpec, estimand_weights, fit_lmm_ml_many, scalar_estimand
from .mechanism import elicit_multiplier
from .pooling import pool_flat, pool_nested

METRIC_COLUMNS = ("scenario", "distribution", "percent_bias", "rmse", "coverage", "ci_width", "gamma",
                  "gamma_w", "gamma_b", "gamma_ratio", "mean_estimate", "completed", "failed", "error")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_seed(args, command):
    if args.seed is None:
        raise ConfigError(f"{command} needs --seed (no implicit random seeding)")


# ---------------------------------------------------------------------------
# simulate


def _simulation_configs(args):
    raw = load_json(args.config, "simulation config") if args.config else {}
    sim = parse_model(SimulationModel, raw, f"config {args.config}" if args.config else "simulation options")
    reps = args.reps if args.reps is not None else sim.replications
    m = args.models if args.models is not None else sim.m_models
    n = args.per_model if args.per_model is not None else sim.n_per_model
    if m < 2:
        raise ConfigError("--models must be at least 2")
    grid = args.grid or sim.grid
    names = args.scenarios.split(",") if args.scenarios else sim.scenarios
    if grid == "table1":
        if names:
            raise ConfigError("use either --grid or --scenarios, not both")
        names = list(GRID_NAMES)
    names = [s.strip() for s in names or [] if s.strip()]
    if not names and not sim.custom_scenarios:
        raise ConfigError("no scenarios selected; pass --scenarios, --grid table1 or a config with scenarios")
    trial = sim.trial.build()
    configs = standard_grid(reps, args.seed, m, n, trial, names) if names else []
    configs = [replace(c, level=sim.level) for c in configs]
    if sim.custom_scenarios:
        template = standard_grid(reps, args.seed, m, n, trial, ["mar-none"])[0]
        template = replace(template, level=sim.level)
        for cs in sim.custom_scenarios:
            configs.append(with_mechanism(template, to_distribution(cs.multiplier), cs.name))
    return configs


def cmd_simulate(args) -> int:
    _require_seed(args, "simulate")
    configs = _simulation_configs(args)
    started = time.perf_counter()
    metrics = run_grid(configs, workers=args.threads)
    elapsed = time.perf_counter() - started
    out = _out_dir(args)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for cfg, mt in zip(configs, metrics):
        row = mt.as_row()
        row["distribution"] = cfg.plan.mechanism.dist.describe()
        w.writerow([row[c] if isinstance(row[c], str) else repr(row[c]) for c in METRIC_COLUMNS])
    (out / "metrics.csv").write_text(buf.getvalue(), encoding="utf-8")

    log = {
        "tool": "mmmi",
        "version": __version__,
        "command": "simulate",
        "master_seed": args.seed,
        "scenarios": [
            {
                "name": c.name,
                "multiplier": c.plan.mechanism.dist.describe(),
                "replications": c.replications,
                "m_models": c.plan.m_models,
                "n_per_model": c.plan.n_per_model,
                "truth": c.truth,
                "level": c.level,
                "completed": mt.replications_completed,
                "failed": mt.replications_failed,
                "error": mt.error,
            }
            for c, mt in zip(configs, metrics)
        ],
        "outputs": ["metrics.csv"],
    }
    (out / "run_log.json").write_text(dump_json(log), encoding="utf-8")

    headers = ["scenario", "PB", "RMSE", "Cvg.", "Width", "gamma", "gamma_w", "gamma_b", "ratio"]
    rows = [[m.name, m.percent_bias, m.rmse, m.coverage, m.ci_width, m.mean_gamma, m.mean_gamma_w,
             m.mean_gamma_b, m.mean_ratio] for m in metrics]
    sys.stdout.write(format_table(headers, rows))
    print(f"finished in {elapsed:.1f}s", file=sys.stderr)
    failed = [m for m in metrics if m.error]
    for m in failed:
        print(f"scenario {m.name}: {m.error}", file=sys.stderr)
    return 4 if failed else 0


# ---------------------------------------------------------------------------
# impute


def _schema_path(args) -> Path:
    if args.schema:
        return Path(args.schema)
    inp = Path(args.input)
    return inp.with_name(inp.name + ".schema.json")


def cmd_impute(args) -> int:
    _require_seed(args, "impute")
    schema = parse_model(SchemaModel, load_json(_schema_path(args), "schema"), "schema")
    d, raw = read_dataset_csv(args.input, schema)
    plan_cfg = parse_model(PlanModel, load_json(args.plan, "plan"), f"plan {args.plan}")
    plan = plan_cfg.build(d, args.seed)
    started = time.perf_counter()
    result = nested_impute(d, plan)
    out = _out_dir(args)
    files = []
    for m in range(plan.m_models):
        for n in range(plan.n_per_model):
            name = f"imp_m{m + 1}_n{n + 1}.csv"
            (out / name).write_text(dataset_csv_text(result.cell(m, n), raw), encoding="utf-8")
            files.append({"model": m + 1, "rep": n + 1, "file": name, "k": float(result.multipliers[m])})
    manifest = {
        "tool": "mmmi",
        "version": __version__,
        "input": Path(args.input).name,
        "master_seed": args.seed,
        "plan": result.manifest["plan"],
        "schema": schema_from_columns(d.columns),
        "multipliers": result.manifest["multipliers"],
        "files": files,
        "timing": {"impute_seconds": round(time.perf_counter() - started, 3)},
    }
    (out / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")
    print(f"wrote {len(files)} imputed datasets and manifest.json to {out}")
    return 0


# ---------------------------------------------------------------------------
# analyze-pool and pool


def _pool_rows(rows, flat: bool, level: float):
    if flat:
        return pool_flat([ScalarEstimate(q, u) for _, _, q, u in rows], level)
    models: dict = {}
    for model, rep, q, u in rows:
        reps = models.setdefault(model, {})
        if rep in reps:
            raise GridError(f"duplicate estimate for model {model}, rep {rep}")
        reps[rep] = ScalarEstimate(q, u)
    if len(models) < 2:
        raise GridError("m ≥ 2 required for nested pooling (found a single model)")
    rep_sets = {tuple(sorted(r)) for r in models.values()}
    if len(rep_sets) != 1:
        raise GridError("grid has holes: models have different sets of reps")
    keys = sorted(rep_sets.pop(), key=_natural)
    grid = NestedEstimateGrid.from_estimates(
        [[models[m][k] for k in keys] for m in sorted(models, key=_natural)]
    )
    return pool_nested(grid, level)


def _natural(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def _emit_report(args, pooled, stem: str):
    out = _out_dir(args)
    (out / f"{stem}.csv").write_text(report_csv_text(pooled), encoding="utf-8")
    sys.stdout.write(report_table(pooled))


def _weights_arg(args):
    if args.weights and args.estimand:
        raise ConfigError("use either --weights or --estimand, not both")
    if args.weights:
        try:
            return tuple(float(x) for x in args.weights.split(","))
        except ValueError:
            raise ConfigError(f"--weights must be comma-separated numbers, got {args.weights!r}") from None
    return args.estimand or "treatment-slope"


def cmd_analyze_pool(args) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = load_json(path, "manifest")
    for key in ("schema", "files"):
        if key not in manifest:
            raise DataError(f"manifest {path} lacks {key!r}")
    schema = parse_model(SchemaModel, manifest["schema"], "manifest schema")
    entries = manifest["files"]
    datasets, keys = [], []
    for e in entries:
        try:
            d, _ = read_dataset_csv(path.parent / e["file"], schema)
        except ConfigError as exc:
            raise DataError(str(exc)) from None
        if d.mask[:, [d.index(c.name) for c in d.outcome_columns]].any():
            raise DataError(f"{e['file']} still has missing outcome values")
        datasets.append(d)
        keys.append((str(e["model"]), str(e["rep"])))
    if not datasets:
        raise DataError("manifest lists no files")
    spec = LmmSpec(covariates=tuple(args.covariates.split(",")) if args.covariates else (), reml=args.reml)
    fits = fit_lmm_ml_many(datasets, spec)
    w = estimand_weights(fits[0].fixed_names, _weights_arg(args))
    rows = []
    for (model, rep), fit in zip(keys, fits):
        est = scalar_estimand(fit, w)
        rows.append((model, rep, est.q_hat, est.u))
    out = _out_dir(args)
    (out / "estimates.csv").write_text(estimates_csv_text(rows), encoding="utf-8")
    _emit_report(args, _pool_rows(rows, False, args.level), "report")
    return 0


def cmd_pool(args) -> int:
    rows = read_estimates_csv(args.estimates)
    _emit_report(args, _pool_rows(rows, args.flat, args.level), "pooled")
    return 0


# ---------------------------------------------------------------------------
# elicit


def cmd_elicit(args) -> int:
    print(elicit_multiplier(args.lower, args.upper, args.family).describe())
    return 0


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None, help="master seed (unsigned 64-bit)")
    common.add_argument("--threads", type=_positive, default=1, help="worker processes")
    common.add_argument("--out", default=".", help="output directory")

    parser = _Parser(prog="mmmi", description="Multiple-model multiple imputation toolkit.")
    parser.add_argument("--version", action="version", version=f"mmmi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="run simulation scenarios")
    p.add_argument("--config", help="JSON simulation config")
    p.add_argument("--scenarios", help="comma-separated scenario names, e.g. mar-none,strong-ample")
    p.add_argument("--grid", choices=["table1"], help="run the full ignorability x uncertainty grid")
    p.add_argument("--reps", type=_positive, help="replications per scenario")
    p.add_argument("--models", type=_positive, help="imputation models M")
    p.add_argument("--per-model", type=_positive, help="imputations per model N")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("impute", parents=[common], help="nested imputation of a dataset CSV")
    p.add_argument("input", help="wide dataset CSV")
    p.add_argument("--plan", required=True, help="JSON imputation plan")
    p.add_argument("--schema", help="JSON column schema (default: <input>.schema.json)")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("analyze-pool", parents=[common], help="fit each imputed dataset and pool")
    p.add_argument("manifest", help="manifest.json or the directory holding it")
    p.add_argument("--estimand", choices=["treatment-slope", "treatment-effect"])
    p.add_argument("--weights", help="comma-separated weights over the fixed effects")
    p.add_argument("--covariates", help="comma-separated extra fixed effects")
    p.add_argument("--reml", action="store_true", help="restricted maximum likelihood")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_analyze_pool)

    p = sub.add_parser("pool", parents=[common], help="pool an estimates CSV (model,rep,q_hat,u)")
    p.add_argument("estimates")
    p.add_argument("--flat", action="store_true", help="single-level pooling of all rows")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("elicit", parents=[common], help="multiplier distribution from expert bounds")
    p.add_argument("lower", type=float)
    p.add_argument("upper", type=float)
    p.add_argument("family", nargs="?", default="normal", choices=["normal", "uniform"])
    p.set_defaults(func=cmd_elicit)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "level", 0.5) is not None and not 0 < getattr(args, "level", 0.5) < 1:
            raise ConfigError("--level must lie in (0, 1)")
        return args.func(args)
    except MmmiError as exc:
        print(f"mmmi: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mmmi: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
