"""Monte Carlo engine: scenario x analysis-scenario x method grids.

Four analysis scenarios cross correct/misspecified treatment and
treatment-free models (the blip model is always correct):

1. both correct; 2. treatment model correct, treatment-free misspecified;
3. treatment model misspecified, treatment-free correct; 4. both wrong.

The misspecified treatment-free model keeps only the identity column; the
misspecified treatment model is intercept-only. The correctly specified
treatment-free part is fitted as a single combined column, and the correctly
specified continuous treatment model is a regression through the origin.

Per (method, analysis, parameter) the report carries the replicate count,
failures (singular designs and the like are recorded, never abort a grid),
mean, empirical SD (n-1 denominator) and relative bias in percent. Reduction
is keyed by replicate index, so results are identical at any parallelism.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import distributed as dist
from . import glm
from . import pooling
from . import weights as weights_mod
from .datagen import ScenarioConfig, generate_replicate, pooling_seed
from .dataset import Dataset
from .errors import MissingReferenceRow, PrivitrError
from .gdwols import DesignSpec, fit_gdwols
from .weights import TreatmentModelSpec

METHOD_GOLD = "gold"
METHOD_POOLED = "pooled"
METHOD_DISTRIBUTED = "distributed"
ALL_METHODS = (METHOD_GOLD, METHOD_POOLED, METHOD_DISTRIBUTED)

PARAMETERS = ("psi0", "psi1")

TF_CORRECT = ("log(x)", "sin(x)", "x")
TF_MISSPECIFIED = ("x",)
BLIP_BASIS = ("x",)


@dataclass(frozen=True)
class AnalysisScenario:
    id: int
    treatment_model_correct: bool
    treatment_free_correct: bool


ANALYSIS_SCENARIOS = {
    1: AnalysisScenario(1, True, True),
    2: AnalysisScenario(2, True, False),
    3: AnalysisScenario(3, False, True),
    4: AnalysisScenario(4, False, False),
}


def design_spec_for(analysis: AnalysisScenario) -> DesignSpec:
    if analysis.treatment_free_correct:
        return DesignSpec(TF_CORRECT, BLIP_BASIS, combined_tf_column=True)
    return DesignSpec(TF_MISSPECIFIED, BLIP_BASIS, combined_tf_column=False)


def treatment_spec_for(analysis: AnalysisScenario, treatment_kind: str,
                       pooled: bool) -> TreatmentModelSpec:
    if not analysis.treatment_model_correct:
        return TreatmentModelSpec(treatment_kind, (), pooled=pooled, include_intercept=True)
    if treatment_kind == "binary":
        return TreatmentModelSpec("binary", ("x",), pooled=pooled, include_intercept=True)
    return TreatmentModelSpec("continuous", ("x",), pooled=pooled, include_intercept=False)


def _individual_weights(data: Dataset, spec: TreatmentModelSpec) -> weights_mod.WeightVector:
    if spec.kind == "binary":
        return weights_mod.binary_weights(data, spec)
    return weights_mod.continuous_ipw_weights(data, spec)


def estimate_gold(data: Dataset, analysis: AnalysisScenario):
    spec = design_spec_for(analysis)
    wv = _individual_weights(data, treatment_spec_for(analysis, _kind_of(data), False))
    return fit_gdwols(data, spec, wv)


def estimate_pooled(data: Dataset, analysis: AnalysisScenario, g: int, seed: int):
    spec = design_spec_for(analysis)
    weight_spec = treatment_spec_for(analysis, _kind_of(data), True)
    assignment = pooling.assign_pools(data, pooling.STRATEGY_CROSS_CENTRE, g=g, seed=seed)
    pooled = pooling.aggregate(data, assignment, spec,
                               extra_bases=weight_spec.covariate_basis)
    return pooling.fit_pooled_gdwols(pooled, spec, weight_spec)


def estimate_distributed(data: Dataset, analysis: AnalysisScenario,
                         site_weight_mode: str = "global"):
    """Split by site, summarize, aggregate, solve.

    "global" fits one treatment model on the full data and hands each site
    its slice of the weights (the exact-equivalence mode); "local" lets every
    site fit its own treatment model, as a real deployment would.
    """
    spec = design_spec_for(analysis)
    weight_spec = treatment_spec_for(analysis, _kind_of(data), False)
    labels = np.asarray([str(s) for s in data.site])
    shared = None
    if site_weight_mode == "global":
        shared = _individual_weights(data, weight_spec).values
    elif site_weight_mode != "local":
        raise ValueError("site_weight_mode must be 'global' or 'local'")
    summaries = []
    for lab in sorted(set(labels)):
        idx = np.flatnonzero(labels == lab)
        site_data = data.subset(idx)
        ext = None if shared is None else shared[idx]
        summaries.append(
            dist.compute_site_summary(site_data, spec, weight_spec,
                                      external_weights=ext, site_id=lab)
        )
    return dist.solve_distributed(dist.aggregate_summaries(summaries))


def _kind_of(data: Dataset) -> str:
    a = data.treatment
    return "binary" if np.all((a == 0.0) | (a == 1.0)) else "continuous"


def run_replicate(config: ScenarioConfig, replicate: int, analysis_ids: tuple[int, ...],
                  methods: tuple[str, ...], site_weight_mode: str = "global") -> dict:
    """All (analysis, method) estimates for one simulated dataset.

    Values are psi arrays, or the error class name for recorded failures.
    """
    data = generate_replicate(config, replicate)
    pool_seed = pooling_seed(config, replicate)
    out: dict[tuple[int, str], object] = {}
    for aid in analysis_ids:
        analysis = ANALYSIS_SCENARIOS[aid]
        for method in methods:
            try:
                if method == METHOD_GOLD:
                    est = estimate_gold(data, analysis)
                elif method == METHOD_POOLED:
                    est = estimate_pooled(data, analysis, config.pool_size_g, pool_seed)
                elif method == METHOD_DISTRIBUTED:
                    est = estimate_distributed(data, analysis, site_weight_mode)
                else:
                    raise ValueError(f"unknown method {method!r}")
                out[(aid, method)] = np.asarray(est.psi, dtype=float)
            except PrivitrError as err:
                out[(aid, method)] = type(err).__name__
    return out


@dataclass(frozen=True)
class MetricsSummary:
    n: int
    mean: float
    empirical_sd: float
    relative_bias_pct: float
    absolute_bias: float
    zero_truth: bool


def compute_metrics(estimates, true_value: float) -> MetricsSummary:
    """Mean, empirical SD (n-1 denominator) and relative bias in percent.

    With a zero truth the relative bias is undefined; the summary is flagged
    and carries the absolute bias instead (relative_bias_pct is NaN).
    """
    values = np.asarray(list(estimates), dtype=float)
    if values.size == 0:
        raise ValueError("compute_metrics needs at least one estimate")
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else float("nan")
    abs_bias = mean - true_value
    if true_value == 0.0:
        return MetricsSummary(values.size, mean, sd, float("nan"), abs_bias, True)
    rel = 100.0 * abs_bias / true_value
    return MetricsSummary(values.size, mean, sd, rel, abs_bias, False)


@dataclass(frozen=True)
class MetricsRow:
    method: str
    analysis_id: int
    parameter: str
    n_replicates: int
    n_failed: int
    mean: float
    empirical_sd: float
    relative_bias_pct: float


@dataclass(frozen=True)
class MetricsReport:
    config: dict
    rows: tuple[MetricsRow, ...]
    failures: tuple[tuple[int, int, str, str], ...]  # (replicate, analysis, method, error)
    runtime_s: float

    def row(self, method: str, analysis_id: int, parameter: str = "psi0") -> MetricsRow:
        for r in self.rows:
            if (r.method, r.analysis_id, r.parameter) == (method, analysis_id, parameter):
                return r
        raise KeyError((method, analysis_id, parameter))


def _replicate_worker(args):
    config, replicate, analysis_ids, methods, site_weight_mode = args
    return replicate, run_replicate(config, replicate, analysis_ids, methods,
                                    site_weight_mode)


def run_grid(config: ScenarioConfig, analysis_ids, methods=ALL_METHODS,
             replicates: int = 300, jobs: int = 1,
             site_weight_mode: str = "global",
             scenario_name: str | None = None) -> MetricsReport:
    """Run the full grid and reduce to a metrics report.

    Replicates are generated from (config.base_seed, replicate) substreams
    and reduced in replicate order, so the report does not depend on `jobs`.
    """
    analysis_ids = tuple(int(a) for a in analysis_ids)
    methods = tuple(methods)
    for aid in analysis_ids:
        if aid not in ANALYSIS_SCENARIOS:
            raise ValueError(f"unknown analysis scenario {aid}")
    t0 = time.perf_counter()
    tasks = [(config, r, analysis_ids, methods, site_weight_mode)
             for r in range(replicates)]
    results: dict[int, dict] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for replicate, res in pool.map(_replicate_worker, tasks, chunksize=8):
                results[replicate] = res
    else:
        for task in tasks:
            replicate, res = _replicate_worker(task)
            results[replicate] = res

    estimates: dict[tuple[int, str], list[np.ndarray]] = {
        (aid, m): [] for aid in analysis_ids for m in methods
    }
    failures: list[tuple[int, int, str, str]] = []
    for replicate in sorted(results):
        for key, value in results[replicate].items():
            if isinstance(value, str):
                failures.append((replicate, key[0], key[1], value))
            else:
                estimates[key].append(value)

    true = {"psi0": config.true_psi[0], "psi1": config.true_psi[1]}
    rows: list[MetricsRow] = []
    for aid in analysis_ids:
        for method in methods:
            psis = estimates[(aid, method)]
            n_failed = replicates - len(psis)
            for j, parameter in enumerate(PARAMETERS):
                if psis:
                    summary = compute_metrics([p[j] for p in psis], true[parameter])
                    rows.append(MetricsRow(method, aid, parameter, summary.n, n_failed,
                                           summary.mean, summary.empirical_sd,
                                           summary.relative_bias_pct))
                else:
                    rows.append(MetricsRow(method, aid, parameter, 0, n_failed,
                                           float("nan"), float("nan"), float("nan")))
    config_echo = {
        "scenario": scenario_name,
        "covariate_mode": config.covariate_mode,
        "treatment_kind": config.treatment_kind,
        "confounding_level": config.confounding_level,
        "n_total": config.n_total,
        "n_centres": config.n_centres,
        "pool_size_g": config.pool_size_g,
        "true_psi": list(config.true_psi),
        "base_seed": config.base_seed,
        "replicates": replicates,
        "analysis_scenarios": list(analysis_ids),
        "methods": list(methods),
        "site_weight_mode": site_weight_mode,
        # failures are singular designs per this condition-estimate threshold
        "condition_limit": glm.CONDITION_LIMIT,
    }
    return MetricsReport(config=config_echo, rows=tuple(rows),
                         failures=tuple(failures),
                         runtime_s=time.perf_counter() - t0)


def write_report_csv(report: MetricsReport, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(report.config, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "analysis_scenario", "parameter", "replicates",
                         "failed", "mean", "empirical_sd", "relative_bias_pct"])
        for r in report.rows:
            writer.writerow([r.method, r.analysis_id, r.parameter, r.n_replicates,
                             r.n_failed, repr(r.mean), repr(r.empirical_sd),
                             repr(r.relative_bias_pct)])


def format_report(report: MetricsReport) -> str:
    header = f"{'method':<12} {'analysis':>8} {'param':<6} {'reps':>5} {'fail':>4} " \
             f"{'mean':>10} {'emp. sd':>10} {'rel bias %':>11}"
    lines = [header, "-" * len(header)]
    for r in report.rows:
        lines.append(
            f"{r.method:<12} {r.analysis_id:>8} {r.parameter:<6} {r.n_replicates:>5} "
            f"{r.n_failed:>4} {r.mean:>10.4f} {r.empirical_sd:>10.4f} "
            f"{r.relative_bias_pct:>11.3f}"
        )
    lines.append(f"runtime: {report.runtime_s:.1f} s; failures recorded: {len(report.failures)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Full-scale reference results and desk-scale comparison.
# ---------------------------------------------------------------------------

REFERENCE_SETTINGS = ("binary_identical", "continuous_identical",
                      "binary_different", "continuous_different")


def setting_for(config: ScenarioConfig) -> str:
    return f"{config.treatment_kind}_{config.covariate_mode}"


def load_reference(setting: str) -> list[dict]:
    """Rows of one shipped full-scale reference table."""
    if setting not in REFERENCE_SETTINGS:
        raise ValueError(f"setting must be one of {REFERENCE_SETTINGS}")
    with resources.files("privitr").joinpath(f"reference/{setting}.csv").open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for record in csv.DictReader(lines):
        rows.append({
            "analysis_scenario": int(record["analysis_scenario"]),
            "method": record["method"],
            "scenario": record["scenario"],
            "confounding": record["confounding"],
            "true_psi0": float(record["true_psi0"]),
            "mean_psi0": float(record["mean_psi0"]),
            "sd_psi0": float(record["sd_psi0"]),
            "relative_bias_pct": float(record["relative_bias_pct"]),
            "n": int(record["n"]),
            "replicates": int(record["replicates"]),
            "pool_size": int(record["pool_size"]),
            "nonconverged": int(record["nonconverged"]),
        })
    return rows


def reference_row(setting: str, scenario_letter: str, analysis_id: int,
                  method: str) -> dict:
    for row in load_reference(setting):
        if (row["scenario"], row["analysis_scenario"], row["method"]) == \
                (scenario_letter, analysis_id, method):
            return row
    raise MissingReferenceRow(
        f"no reference row for setting={setting!r} scenario={scenario_letter!r} "
        f"analysis={analysis_id} method={method!r}"
    )


@dataclass(frozen=True)
class DiffRow:
    method: str
    analysis_id: int
    ref_relative_bias_pct: float
    run_relative_bias_pct: float
    ref_sd_scaled: float
    run_sd: float
    passed: bool


def compare_to_reference(report: MetricsReport, scenario_letter: str,
                         setting: str, bias_tol_pct: float = 15.0,
                         sd_factor: float = 2.0) -> list[DiffRow]:
    """Side-by-side comparison of a desk-scale run against full-scale targets.

    Reference SDs are rescaled by sqrt(n_ref / n_run) before comparison since
    empirical SDs shrink with sample size. A row passes when the relative
    biases agree within `bias_tol_pct` percentage points and the run SD lies
    within a factor `sd_factor` of the rescaled reference SD. Only psi0 is
    compared; the reference tables carry no psi1.
    """
    n_run = int(report.config["n_total"])
    diffs = []
    for aid in report.config["analysis_scenarios"]:
        for method in report.config["methods"]:
            ref = reference_row(setting, scenario_letter, aid, method)
            run = report.row(method, aid, "psi0")
            scale = np.sqrt(ref["n"] / n_run)
            ref_sd_scaled = ref["sd_psi0"] * scale
            bias_ok = abs(run.relative_bias_pct - ref["relative_bias_pct"]) <= bias_tol_pct
            sd_ok = ref_sd_scaled / sd_factor <= run.empirical_sd <= ref_sd_scaled * sd_factor
            diffs.append(DiffRow(method, aid, ref["relative_bias_pct"],
                                 run.relative_bias_pct, float(ref_sd_scaled),
                                 run.empirical_sd, bool(bias_ok and sd_ok)))
    return diffs


def write_diff_csv(diffs: list[DiffRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "analysis_scenario", "ref_relative_bias_pct",
                         "run_relative_bias_pct", "ref_sd_scaled", "run_sd", "pass"])
        for d in diffs:
            writer.writerow([d.method, d.analysis_id, repr(d.ref_relative_bias_pct),
                             repr(d.run_relative_bias_pct), repr(d.ref_sd_scaled),
                             repr(d.run_sd), "PASS" if d.passed else "FAIL"])
