"""Command-line entry point.

Subcommands: denoise, synth, verify, eval, simulate.  Every run is
fully described by a flat dotted-key config file plus command-line
overrides; all output tables carry a '#' metadata preamble with the
tool version, seed and config hash so runs can be reproduced exactly.
Outputs are written to a temporary file and renamed on success.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, data_model, estimators, evalharness, oracle, synthgen
from .regress import RegressorConfig

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    pass


class VerificationFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config handling


def read_config(path):
    """Parse a flat ``key = value`` config file ('#' starts a comment)."""
    cfg = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, value = line.split("=", 1)
                cfg[key.strip()] = value.strip()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    return cfg


def config_hash(cfg):
    # paths and worker counts do not influence results, so identical
    # runs into different directories (or with different --jobs) hash
    # and serialize identically
    canon = json.dumps(
        {k: v for k, v in cfg.items() if k not in ("out", "input", "jobs")},
        sort_keys=True,
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _coerce(value):
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


KNOWN_PREFIXES = ("schema.", "regressor.x.", "regressor.res.", "regressor.smooth.",
                  "regressor.synth.")
KNOWN_KEYS = {
    "input", "out", "seed", "jobs", "method", "methods", "trials", "joints",
    "synth.species_grid", "synth.sigma_grid", "synth.n_obs",
    "eval.brightness_column", "eval.test_filter", "eval.threshold", "eval.n_aux",
    "simulate.years", "simulate.days_per_year", "simulate.n_species",
    "simulate.beta", "simulate.idio_sigma",
}


def validate_keys(cfg):
    for key in cfg:
        if key in KNOWN_KEYS:
            continue
        if any(key.startswith(p) for p in KNOWN_PREFIXES):
            continue
        raise UsageError(f"unknown config key {key!r}")


def regressor_from_config(cfg, prefix, default_kind):
    kind = cfg.get(f"regressor.{prefix}.kind", default_kind)
    hyper = {}
    pre = f"regressor.{prefix}."
    for key, value in cfg.items():
        if key.startswith(pre) and key != pre + "kind":
            hyper[key[len(pre):]] = _coerce(value)
    seed = int(cfg.get("seed", 0))
    return RegressorConfig(kind=kind, hyperparameters=hyper, seed=seed)


def schema_from_config(cfg):
    schema = {
        key[len("schema."):]: value
        for key, value in cfg.items()
        if key.startswith("schema.")
    }
    if not schema:
        raise UsageError("no schema.* entries in config")
    return schema


def _grid(cfg, key, default):
    if key not in cfg:
        return list(default)
    return [_coerce(v.strip()) for v in cfg[key].split(",") if v.strip()]


# ---------------------------------------------------------------------------
# output helpers


def preamble(cfg, seed):
    return [
        f"tqsreg_version={__version__}",
        f"seed={seed}",
        f"config_hash={config_hash(cfg)}",
    ]


def atomic(path, write_fn):
    """Write via ``write_fn(tmp_path)`` and rename into place on success."""
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def merged_config(args, extra=()):
    cfg = read_config(args.config) if args.config else {}
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if getattr(args, "jobs", None):
        cfg["jobs"] = str(args.jobs)
    if args.out:
        cfg["out"] = args.out
    for key, value in extra:
        if value is not None:
            cfg[key] = str(value)
    validate_keys(cfg)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    cfg = merged_config(args)
    seed = int(cfg.get("seed", 0))
    sim = evalharness.simulate_moth_survey(
        years=int(cfg.get("simulate.years", args.years)),
        days_per_year=int(cfg.get("simulate.days_per_year", args.days_per_year)),
        n_species=int(cfg.get("simulate.n_species", args.n_species)),
        seed=seed,
        beta=float(cfg.get("simulate.beta", 1.0)),
        idio_sigma=float(cfg.get("simulate.idio_sigma", 0.1)),
    )
    out = _out_dir(args)
    atomic(os.path.join(out, "survey.csv"),
           lambda p: data_model.save_table(sim.table, p))

    def write_truth(p):
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(sim.table.species_names) + "\n")
            for row in sim.true_log_abundance:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    atomic(os.path.join(out, "truth.csv"), write_truth)
    print(f"wrote {out}/survey.csv ({sim.table.n_rows} rows, "
          f"{sim.table.n_species} species)")
    return EXIT_OK


def cmd_denoise(args):
    cfg = merged_config(args, [("input", args.input), ("method", args.method)])
    if "input" not in cfg:
        raise UsageError("denoise requires --input or config key 'input'")
    seed = int(cfg.get("seed", 0))
    schema = schema_from_config(cfg) if any(k.startswith("schema.") for k in cfg) \
        else None
    if schema is None:
        # no schema supplied: assume a table written by this tool
        probe = _default_schema(cfg["input"])
        schema = probe
    table = data_model.load_table(cfg["input"], schema)
    if table.n_species < 2:
        raise UsageError("need >= 2 species to denoise")
    cfg_x = regressor_from_config(cfg, "x", "spline_gam")
    cfg_res = regressor_from_config(cfg, "res", "boosted_trees")
    method = cfg.get("method", "3qs")
    if method == "3qs":
        result = estimators.tqs_multi_species(table, cfg_x, cfg_res)
        z_hat = result.z_hat
    elif method == "hs":
        z_hat = evalharness.denoise_hs(table, cfg_res)
        result = None
    else:
        raise UsageError(f"unknown method {method!r} (expected 3qs or hs)")
    out = _out_dir(args)
    pre = preamble(cfg, seed) + [f"method={method}"]

    def write_csv(p):
        with open(p, "w", encoding="utf-8", newline="") as fh:
            for line in pre:
                fh.write(f"# {line}\n")
            fh.write(",".join(table.species_names) + "\n")
            for row in z_hat:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    atomic(os.path.join(out, "zhat.csv"), write_csv)
    if result is not None:
        diag = {"meta": dict(zip(("version", "seed", "config_hash"), pre)),
                "method": method,
                "per_species": result.training_diagnostics(table)}
    else:
        diag = {"method": method, "per_species": [
            {"species": s} for s in table.species_names]}

    def write_json(p):
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(diag, fh, indent=2, sort_keys=True)
            fh.write("\n")

    atomic(os.path.join(out, "diagnostics.json"), write_json)
    if result is not None:
        for entry in result.training_diagnostics(table):
            print(f"{entry['species']}: covariate_mse="
                  f"{entry['covariate_model_mse']:.6g} "
                  f"residual_mse={entry['residual_model_mse']:.6g}")
    print(f"wrote {out}/zhat.csv and {out}/diagnostics.json")
    return EXIT_OK


def _default_schema(path):
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        header = next(_csv.reader(fh))
    schema = {}
    for col in header:
        if col in ("day_of_year",):
            schema[col] = "covariate"
        elif col in ("year", "group"):
            schema[col] = "group"
        elif col.startswith("species"):
            schema[col] = "count"
        else:
            schema[col] = "diagnostic"
    return schema


def cmd_synth(args):
    cfg = merged_config(args, [("trials", args.trials)])
    seed = int(cfg.get("seed", 0))
    jobs = int(cfg.get("jobs", 1))
    trials = int(cfg.get("trials", 20))
    n_obs = int(cfg.get("synth.n_obs", synthgen.DEFAULT_N_OBS))
    backend = regressor_from_config(cfg, "synth", "kernel_ridge")
    ns = _grid(cfg, "synth.species_grid", synthgen.SPECIES_GRID)
    sigmas = _grid(cfg, "synth.sigma_grid", synthgen.SIGMA_GRID)
    species_rows = synthgen.run_species_sweep(
        ns, trials, backend, master_seed=seed, n_obs=n_obs, jobs=jobs)
    noise_rows = synthgen.run_noise_sweep(
        sigmas, trials, backend, master_seed=seed + 1, n_obs=n_obs, jobs=jobs)
    out = _out_dir(args)
    pre = preamble(cfg, seed)
    atomic(os.path.join(out, "species_sweep.csv"),
           lambda p: synthgen.sweep_to_csv(species_rows, p, pre))
    atomic(os.path.join(out, "noise_sweep.csv"),
           lambda p: synthgen.sweep_to_csv(noise_rows, p, pre))
    print(f"wrote {out}/species_sweep.csv and {out}/noise_sweep.csv")
    return EXIT_OK


def cmd_verify(args):
    cfg = merged_config(args, [("joints", args.joints)])
    seed = int(cfg.get("seed", 0))
    n_joints = int(cfg.get("joints", 100))
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFF))
    reports = []
    failures = []
    for idx in range(n_joints):
        joint = oracle.random_joint(rng, additive=True, zero_mean_f=True)
        entry = {"joint": idx, "seed": seed, "support": joint.size}
        try:
            z_hat = oracle.exact_tqs(joint)
            if args.corrupt_for_testing:
                z_hat = z_hat + 1.0  # negative-control hook used by the test suite
                lhs = joint.expectation((z_hat - joint.z1) ** 2)
                rhs = joint.expectation((joint.y1 - joint.z1) ** 2)
                t1 = oracle.TheoremReport(lhs, rhs, rhs - lhs >= -oracle.TOL, rhs - lhs)
            else:
                t1 = oracle.verify_theorem1(joint)
            t2 = oracle.verify_theorem2(joint)
            entry["theorem1"] = t1.to_dict()
            entry["theorem2"] = t2.to_dict()
            ok = t1.satisfied and t2.satisfied
        except AssertionError as e:
            entry["error"] = str(e)
            ok = False
        entry["satisfied"] = ok
        if not ok:
            failures.append(idx)
        reports.append(entry)
    doc = {
        "meta": {"version": __version__, "seed": seed,
                 "config_hash": config_hash(cfg), "joints": n_joints},
        "failures": failures,
        "reports": reports,
    }
    out = _out_dir(args)

    def write(p):
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    atomic(os.path.join(out, "theorems.json"), write)
    if failures:
        print(f"FAIL: {len(failures)}/{n_joints} joints failed: {failures}")
        return EXIT_VERIFY_FAIL
    print(f"ok: {n_joints}/{n_joints} joints satisfied")
    return EXIT_OK


def cmd_eval(args):
    cfg = merged_config(args, [
        ("input", args.input),
        ("methods", args.methods),
        ("eval.test_filter", args.test_filter),
    ])
    if "input" not in cfg:
        raise UsageError("eval requires --input or config key 'input'")
    seed = int(cfg.get("seed", 0))
    schema = schema_from_config(cfg) if any(k.startswith("schema.") for k in cfg) \
        else _default_schema(cfg["input"])
    table = data_model.load_table(cfg["input"], schema)
    methods = [m.strip() for m in cfg.get("methods", ",".join(evalharness.METHODS)).split(",")
               if m.strip()]
    cfg_x = regressor_from_config(cfg, "x", "spline_gam")
    cfg_res = regressor_from_config(cfg, "res", "boosted_trees")
    smooth_cfg = regressor_from_config(cfg, "smooth", "spline_gam")
    brightness_column = cfg.get("eval.brightness_column")
    filter_kind = cfg.get("eval.test_filter", "none")
    if filter_kind == "brightness-zero":
        column = brightness_column or (
            next(iter(table.diagnostics)) if len(table.diagnostics) == 1 else None)
        if column is None or column not in table.diagnostics:
            raise UsageError("brightness-zero filter needs a brightness column")
        thr = cfg.get("eval.threshold")
        thr = float(thr) if thr is not None else None
        test_filter = lambda t: evalharness.brightness_zero_subset(t, column, thr)
    elif filter_kind in ("none", None):
        test_filter = None
    else:
        raise UsageError(f"unknown test filter {filter_kind!r}")
    n_aux = cfg.get("eval.n_aux")
    report = evalharness.loyo_evaluate(
        table, methods, cfg_x, cfg_res, smooth_cfg,
        test_filter=test_filter,
        brightness_column=brightness_column,
        n_aux=int(n_aux) if n_aux is not None else None,
        with_diagnostics=bool(table.diagnostics),
    )
    out = _out_dir(args)
    pre = preamble(cfg, seed)
    atomic(os.path.join(out, "eval_report.json"),
           lambda p: report.to_json(p, {"version": __version__, "seed": seed,
                                        "config_hash": config_hash(cfg)}))
    atomic(os.path.join(out, "eval_cells.csv"), lambda p: report.to_csv(p, pre))
    print("mean percent improvement vs raw baseline:")
    for method in methods:
        print(f"  {method:>8s}: {report.improvements[method]:+8.2f}%")
    print(f"wrote {out}/eval_report.json and {out}/eval_cells.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tqsreg",
        description="Systematic measurement-error removal via "
                    "three-quarter-sibling regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat dotted-key config file")
        p.add_argument("--seed", type=int, default=None,
                       help="master random seed (default 0)")
        p.add_argument("--out", help="output directory (default '.')")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for independent trials (default 1)")

    p = sub.add_parser("denoise", help="denoise a counts CSV")
    common(p)
    p.add_argument("--input", help="input CSV path")
    p.add_argument("--method", choices=["3qs", "hs"], default=None,
                   help="denoising method (default 3qs)")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("synth", help="run the synthetic MSE sweeps")
    common(p)
    p.add_argument("--trials", type=int, default=None,
                   help="instances per grid point (default 20)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="exact-enumeration theorem checks")
    common(p)
    p.add_argument("--joints", type=int, default=None,
                   help="number of random joints (default 100)")
    p.add_argument("--corrupt-for-testing", action="store_true",
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="leave-one-year-out evaluation")
    common(p)
    p.add_argument("--input", help="input CSV path")
    p.add_argument("--methods", default=None,
                   help="comma-separated subset of raw,hs,3qs,mb,global")
    p.add_argument("--test-filter", choices=["none", "brightness-zero"],
                   default=None, help="test-subset rule (default none)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="write a simulated survey CSV")
    common(p)
    p.add_argument("--years", type=int, default=5)
    p.add_argument("--days-per-year", dest="days_per_year", type=int, default=180)
    p.add_argument("--n-species", dest="n_species", type=int, default=10)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailure as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY_FAIL
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
