"""Command line interface.

Subcommands: simulate, pool, site-summary, aggregate, estimate, dose, bench,
serve. Every stochastic subcommand requires an explicit --seed, and every
output artifact embeds the effective configuration (JSON results carry a
"config" field; CSVs start with a '# {...}' comment line).

Exit codes: 0 ok; 2 configuration or input error; 3 numerical failure
(condition number on stderr for singular designs); 4 protocol error
(fingerprint mismatch, duplicate site, malformed summary).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import distributed as dist
from . import harness, pooling
from . import weights as weights_mod
from .datagen import (
    CONFOUNDING_LEVELS,
    ScenarioConfig,
    generate_replicate,
    scenario,
)
from .dataset import Dataset, read_csv, write_csv
from .errors import (
    ConfigMissing,
    DegenerateTreatment,
    DimensionMismatch,
    DuplicateSite,
    EmptyCentre,
    FingerprintMismatch,
    FingerprintMissing,
    MalformedSummary,
    MissingReferenceRow,
    NonConvergence,
    NonPositiveCovariate,
    PoolSizeExceedsCentre,
    SeparationDetected,
    SingularDesign,
    UnknownBasisFunction,
)
from .gdwols import (
    DesignSpec,
    DoseRange,
    estimate_from_dict,
    estimate_to_dict,
    fit_gdwols,
    optimal_dose,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PROTOCOL = 4

_CONFIG_ERRORS = (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError,
                  ConfigMissing, UnknownBasisFunction, NonPositiveCovariate,
                  EmptyCentre, PoolSizeExceedsCentre, MissingReferenceRow,
                  DimensionMismatch)
_NUMERICAL_ERRORS = (SingularDesign, DegenerateTreatment, SeparationDetected,
                     NonConvergence)
_PROTOCOL_ERRORS = (FingerprintMismatch, DuplicateSite, MalformedSummary,
                    FingerprintMissing)


def load_design_config(path: str) -> tuple[DesignSpec, weights_mod.TreatmentModelSpec, float | None]:
    obj = json.loads(Path(path).read_text())
    spec = DesignSpec(
        treatment_free_basis=tuple(obj["treatment_free_basis"]),
        blip_basis=tuple(obj["blip_basis"]),
        blip_order=obj.get("blip_order", "linear"),
        combined_tf_column=bool(obj.get("combined_tf_column", False)),
    )
    tm = obj["treatment_model"]
    weight_spec = weights_mod.TreatmentModelSpec(
        kind=tm["kind"],
        covariate_basis=tuple(tm.get("basis", ())),
        pooled=False,
        include_intercept=bool(tm.get("intercept", True)),
    )
    cap = obj.get("weight_cap")
    return spec, weight_spec, None if cap is None else float(cap)


def _design_config_echo(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _individual_weights(data: Dataset, weight_spec, cap):
    if weight_spec.kind == "binary":
        return weights_mod.binary_weights(data, weight_spec)
    return weights_mod.continuous_ipw_weights(data, weight_spec, cap)


def _write_json(obj: dict, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --------------------------------------------------------------------------
# subcommand implementations
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.scenario is not None:
        config = scenario(args.scenario, n_total=args.n, base_seed=args.seed)
    else:
        missing = [flag for flag, v in (("--covariate-mode", args.covariate_mode),
                                        ("--treatment-kind", args.treatment_kind),
                                        ("--confounding", args.confounding)) if v is None]
        if missing:
            raise ValueError(
                f"either pass --scenario or all of: {', '.join(missing)}"
            )
        config = ScenarioConfig(
            covariate_mode=args.covariate_mode, treatment_kind=args.treatment_kind,
            confounding_level=args.confounding, pool_size_g=args.g,
            n_total=args.n, base_seed=args.seed,
        )
    echo = {
        "command": "simulate", "scenario": args.scenario,
        "covariate_mode": config.covariate_mode,
        "treatment_kind": config.treatment_kind,
        "confounding_level": config.confounding_level, "n": args.n,
        "seed": args.seed, "replicates": args.replicates, "noise_sd": args.noise_sd,
    }
    if args.replicates == 1:
        data = generate_replicate(config, 0, noise_sd=args.noise_sd)
        write_csv(data, args.out, config=echo)
    else:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for r in range(args.replicates):
            data = generate_replicate(config, r, noise_sd=args.noise_sd)
            write_csv(data, out_dir / f"replicate_{r:04d}.csv",
                      config={**echo, "replicate": r})
    return EXIT_OK


def _parse_g_by_centre(text: str) -> dict[str, int]:
    out = {}
    for part in text.split(","):
        centre, _, size = part.partition("=")
        if not size:
            raise ValueError("--g-by-centre expects 'centre=g,centre=g,...'")
        out[centre.strip()] = int(size)
    return out


def cmd_pool(args) -> int:
    spec, weight_spec, _ = load_design_config(args.design)
    data = read_csv(args.data)
    g_by_centre = _parse_g_by_centre(args.g_by_centre) if args.g_by_centre else None
    assignment = pooling.assign_pools(data, args.strategy, g=args.g,
                                      g_by_centre=g_by_centre, seed=args.seed)
    pooled = pooling.aggregate(data, assignment, spec,
                               extra_bases=weight_spec.covariate_basis)
    echo = {
        "command": "pool", "data": args.data, "design": _design_config_echo(args.design),
        "strategy": args.strategy, "g": args.g, "g_by_centre": g_by_centre,
        "seed": args.seed, "n_pools": pooled.n_pools,
        "n_excluded": int(len(assignment.excluded)),
    }
    pooling.write_pooled_csv(pooled, spec, args.out, config=echo)
    return EXIT_OK


def cmd_site_summary(args) -> int:
    spec, weight_spec, cap = load_design_config(args.design)
    data = read_csv(args.data)
    if args.site is not None:
        labels = np.asarray([str(s) for s in data.site])
        idx = np.flatnonzero(labels == args.site)
        if idx.size == 0:
            raise ValueError(f"no rows for site {args.site!r} in {args.data}")
        data = data.subset(idx)
    summary = dist.compute_site_summary(data, spec, weight_spec, cap=cap,
                                        site_id=args.site)
    dist.write_summary(summary, args.out)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    paths = sorted(Path(args.summaries).glob("*.json"))
    if not paths:
        raise ValueError(f"no summary JSON files in {args.summaries}")
    summaries = [dist.read_summary(p) for p in paths]
    agg = dist.aggregate_summaries(summaries)
    estimate = dist.solve_distributed(agg)
    echo = {"command": "aggregate", "summaries": [str(p) for p in paths]}
    _write_json(estimate_to_dict(estimate, config=echo), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    spec, weight_spec, cap = load_design_config(args.design)
    data = read_csv(args.data)
    echo = {
        "command": "estimate", "data": args.data,
        "design": _design_config_echo(args.design), "method": args.method,
        "strategy": args.strategy, "g": args.g, "seed": args.seed,
    }
    if args.method == "gold":
        wv = _individual_weights(data, weight_spec, cap)
        estimate = fit_gdwols(data, spec, wv)
    elif args.method == "pooled":
        if args.seed is None:
            raise ValueError("--method pooled requires --seed (random pool assignment)")
        g_by_centre = _parse_g_by_centre(args.g_by_centre) if args.g_by_centre else None
        assignment = pooling.assign_pools(data, args.strategy, g=args.g,
                                          g_by_centre=g_by_centre, seed=args.seed)
        pooled = pooling.aggregate(data, assignment, spec,
                                   extra_bases=weight_spec.covariate_basis)
        pooled_spec = weights_mod.TreatmentModelSpec(
            kind=weight_spec.kind, covariate_basis=weight_spec.covariate_basis,
            pooled=True, include_intercept=weight_spec.include_intercept,
        )
        estimate = pooling.fit_pooled_gdwols(pooled, spec, pooled_spec, cap)
    elif args.method == "distributed-local":
        summaries = [
            dist.compute_site_summary(site_data, spec, weight_spec, cap=cap, site_id=lab)
            for lab, site_data in data.split_by_site().items()
        ]
        estimate = dist.solve_distributed(dist.aggregate_summaries(summaries))
    else:
        raise ValueError(f"unknown method {args.method!r}")
    _write_json(estimate_to_dict(estimate, config=echo), args.out)
    return EXIT_OK


def _parse_covariates(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise ValueError("--covariates expects 'name=value,name=value,...'")
        out[name.strip()] = float(value)
    return out


def cmd_dose(args) -> int:
    est_obj = json.loads(Path(args.estimate).read_text())
    estimate = estimate_from_dict(est_obj)
    covariates = _parse_covariates(args.covariates)
    lo, _, hi = args.range.partition(",")
    dose_range = DoseRange(float(lo), float(hi))
    decision = optimal_dose(estimate, covariates, dose_range)
    _write_json({
        "dose": decision.dose,
        "at_boundary": decision.at_boundary,
        "degenerate_flat": decision.degenerate_flat,
        "config": {"command": "dose", "estimate": args.estimate,
                   "covariates": covariates, "range": [dose_range.a_min, dose_range.a_max]},
    }, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    analysis_ids = tuple(int(a) for a in args.analysis.split(","))
    methods = tuple(args.methods.split(","))
    config = scenario(args.scenario, n_total=args.n, base_seed=args.seed)
    report = harness.run_grid(config, analysis_ids, methods,
                              replicates=args.replicates, jobs=args.jobs,
                              site_weight_mode=args.site_weights,
                              scenario_name=args.scenario)
    harness.write_report_csv(report, args.out)
    if args.table:
        print(harness.format_report(report))
    if args.compare:
        setting = harness.setting_for(config)
        diffs = harness.compare_to_reference(report, args.scenario, setting,
                                             bias_tol_pct=args.bias_tol,
                                             sd_factor=args.sd_factor)
        if args.diff_out:
            harness.write_diff_csv(diffs, args.diff_out)
        for d in diffs:
            status = "PASS" if d.passed else "FAIL"
            print(f"{status} method={d.method} analysis={d.analysis_id} "
                  f"relbias ref={d.ref_relative_bias_pct:.2f}% run={d.run_relative_bias_pct:.2f}% "
                  f"sd ref(scaled)={d.ref_sd_scaled:.3f} run={d.run_sd:.3f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _http_json(url: str, method: str = "GET", payload: dict | None = None) -> dict:
    import urllib.error
    import urllib.request

    body = None if payload is None else json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=body, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as res:
            return json.loads(res.read().decode("utf-8"))
    except urllib.error.HTTPError as err:
        detail = err.read().decode("utf-8", errors="replace")
        if err.code == 409:
            raise DuplicateSite(f"coordinator rejected the request: {detail}") from err
        if err.code == 422:
            raise MalformedSummary(f"coordinator rejected the request: {detail}") from err
        raise ValueError(f"coordinator returned HTTP {err.code}: {detail}") from err


def cmd_submit(args) -> int:
    base = args.url.rstrip("/")
    for path in args.summaries:
        summary = dist.read_summary(path)
        res = _http_json(f"{base}/summaries", "POST", dist.summary_to_dict(summary))
        print(f"submitted {summary.site_id} (coordinator holds {res['n_sites_held']})")
    return EXIT_OK


def cmd_remote_estimate(args) -> int:
    base = args.url.rstrip("/")
    payload = {"fingerprint": args.fingerprint}
    res = _http_json(f"{base}/estimate", "POST", payload)
    res["config"] = {"command": "remote-estimate", "url": args.url,
                     "fingerprint": args.fingerprint}
    _write_json(res, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privitr",
        description="Estimate individualized treatment rules under three "
                    "data-privacy regimes (gold standard, data pooling, "
                    "distributed regression).",
        epilog="exit codes: 0 ok; 2 configuration or input error; "
               "3 numerical failure (condition number on stderr); "
               "4 protocol error (fingerprint mismatch, duplicate site, "
               "malformed summary)",
    )
    parser.add_argument("--version", action="version", version=f"privitr {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="generate synthetic study datasets as CSV")
    p.add_argument("--scenario",
                   help="scenario id (a..t, plus .bis/.ter pool-size variants); "
                        "alternatively give the explicit parameters below")
    p.add_argument("--covariate-mode", choices=("identical", "different"))
    p.add_argument("--treatment-kind", choices=("binary", "continuous"))
    p.add_argument("--confounding", choices=CONFOUNDING_LEVELS)
    p.add_argument("--g", type=int, default=30, help="pool size recorded in the config")
    p.add_argument("--n", type=int, default=6000, help="total sample size")
    p.add_argument("--seed", type=int, required=True, help="base seed (required)")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output CSV (or directory when --replicates > 1)")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("pool", help="microaggregate a dataset into pooled rows")
    p.add_argument("--data", required=True)
    p.add_argument("--design", required=True, help="design config JSON")
    p.add_argument("--strategy", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--g", type=int, help="pool size (strategies 1 and 2)")
    p.add_argument("--g-by-centre", help="per-centre sizes, e.g. '1=2,2=3,3=5' (strategy 3)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pool)

    p = sub.add_parser("site-summary", help="compute one site's matrix summary")
    p.add_argument("--data", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--site", help="site label to select (data may hold several)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_site_summary)

    p = sub.add_parser("aggregate", help="combine summary JSONs and solve")
    p.add_argument("summaries", help="directory of summary *.json files")
    p.add_argument("--out", help="estimate JSON (stdout when omitted)")
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("estimate", help="fit the blip model on a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--method", choices=("gold", "pooled", "distributed-local"),
                   default="gold")
    p.add_argument("--strategy", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--g", type=int)
    p.add_argument("--g-by-centre")
    p.add_argument("--seed", type=int, help="required for --method pooled")
    p.add_argument("--out", help="estimate JSON (stdout when omitted)")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("dose", help="optimal dose from a quadratic blip estimate")
    p.add_argument("--estimate", required=True, help="estimate JSON")
    p.add_argument("--covariates", required=True, help="'x=2.5,age=60'")
    p.add_argument("--range", required=True, help="allowed dose range 'lo,hi' (no default)")
    p.add_argument("--out", help="dose JSON (stdout when omitted)")
    p.set_defaults(fn=cmd_dose)

    p = sub.add_parser("bench", help="Monte Carlo grid over analysis scenarios")
    p.add_argument("--scenario", required=True)
    p.add_argument("--analysis", default="1,2,3,4", help="comma list of 1..4")
    p.add_argument("--methods", default="gold,pooled,distributed")
    p.add_argument("--n", type=int, default=6000)
    p.add_argument("--replicates", "--reps", dest="replicates", type=int, default=300)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--site-weights", choices=("global", "local"), default="global")
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--table", action="store_true", help="print a readable table")
    p.add_argument("--compare", action="store_true",
                   help="diff against the shipped full-scale reference")
    p.add_argument("--bias-tol", type=float, default=15.0)
    p.add_argument("--sd-factor", type=float, default=2.0)
    p.add_argument("--diff-out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="run the coordinator HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("submit", help="send summary files to a running coordinator")
    p.add_argument("summaries", nargs="+", help="summary JSON files")
    p.add_argument("--url", default="http://127.0.0.1:8000")
    p.set_defaults(fn=cmd_submit)

    p = sub.add_parser("remote-estimate",
                       help="ask a running coordinator to aggregate and solve")
    p.add_argument("--url", default="http://127.0.0.1:8000")
    p.add_argument("--fingerprint", help="restrict to one design fingerprint")
    p.add_argument("--out", help="estimate JSON (stdout when omitted)")
    p.set_defaults(fn=cmd_remote_estimate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _PROTOCOL_ERRORS as err:
        print(f"protocol error: {err}", file=sys.stderr)
        return EXIT_PROTOCOL
    except _NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _CONFIG_ERRORS as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
