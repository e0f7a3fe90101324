"""Synthetic data generation for the simulation study and the dosing demo.

Confounding levels map to the treatment-model strength: for a binary
treatment, P(A=1|x) = 1 / (1 + rho * exp(-(x - 10))) with rho in
{15, 8, 5, 2, 1} from very_low to very_high; for a continuous treatment,
A ~ N(x, sd_a) with sd_a in {12, 4, 1.9, 1.2, 0.5}. The outcome is
y = log(x) + sin(x) + x + a * (psi0 + psi1 * x) + eps with standard normal
errors.

Randomness is organized as independent substreams keyed by
(base_seed, replicate, stream, centre), so generation is bit-reproducible
regardless of execution order or parallelism.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConfigMissing, NonPositiveCovariate

CONFOUNDING_LEVELS = ("very_low", "low", "moderate", "high", "very_high")
BINARY_RHO = {"very_low": 15.0, "low": 8.0, "moderate": 5.0, "high": 2.0, "very_high": 1.0}
CONTINUOUS_SD_A = {"very_low": 12.0, "low": 4.0, "moderate": 1.9, "high": 1.2, "very_high": 0.5}

# Stated operating ranges per level: treated fraction (binary) and corr(A, X)
# (continuous); used by generator-calibration checks.
TREATED_FRACTION_BRACKETS = {
    "very_low": (0.05, 0.20),
    "low": (0.10, 0.25),
    "moderate": (0.15, 0.30),
    "high": (0.25, 0.40),
    "very_high": (0.35, 0.50),
}
CORRELATION_BRACKETS = {
    "very_low": (0.0, 0.1),
    "low": (0.2, 0.3),
    "moderate": (0.4, 0.5),
    "high": (0.6, 0.7),
    "very_high": (0.8, 1.0),
}

# Which distribution each centre draws covariates from in "different" mode.
DEFAULT_CENTRE_DISTRIBUTIONS = ("normal_10_1", "uniform_6_14", "lognormal_0.7_0.5")

_STREAM_COVARIATE = 0
_STREAM_TREATMENT = 1
_STREAM_NOISE = 2
_STREAM_POOLING = 3


@dataclass(frozen=True)
class ScenarioConfig:
    covariate_mode: str  # "identical" | "different"
    treatment_kind: str  # "binary" | "continuous"
    confounding_level: str
    pool_size_g: int = 30
    n_total: int = 60000
    n_centres: int = 3
    true_psi: tuple[float, float] = (1.0, 1.0)
    base_seed: int = 0
    centre_distributions: tuple[str, ...] = DEFAULT_CENTRE_DISTRIBUTIONS

    def __post_init__(self):
        if self.covariate_mode not in ("identical", "different"):
            raise ValueError(f"unknown covariate_mode {self.covariate_mode!r}")
        if self.treatment_kind not in ("binary", "continuous"):
            raise ValueError(f"unknown treatment_kind {self.treatment_kind!r}")
        if self.confounding_level not in CONFOUNDING_LEVELS:
            raise ValueError(
                f"confounding_level must be one of {CONFOUNDING_LEVELS}, "
                f"got {self.confounding_level!r}"
            )
        if self.covariate_mode == "different" and len(self.centre_distributions) < self.n_centres:
            raise ValueError("need one centre distribution per centre in 'different' mode")

    @property
    def rho(self) -> float:
        return BINARY_RHO[self.confounding_level]

    @property
    def sd_a(self) -> float:
        return CONTINUOUS_SD_A[self.confounding_level]


def scenario_table() -> dict[str, ScenarioConfig]:
    """All 40 study scenarios keyed by letter (a-t, plus .bis / .ter pool sizes)."""
    table: dict[str, ScenarioConfig] = {}
    letters = "abcdefghijklmnopqrst"
    for i, letter in enumerate(letters):
        mode = "identical" if i < 10 else "different"
        kind = "binary" if (i % 10) < 5 else "continuous"
        level = CONFOUNDING_LEVELS[i % 5]
        table[letter] = ScenarioConfig(mode, kind, level, pool_size_g=30)
    for letter in "abcdefghij":
        table[f"{letter}.bis"] = replace(table[letter], pool_size_g=100)
        table[f"{letter}.ter"] = replace(table[letter], pool_size_g=600)
    return table


def scenario(letter: str, **overrides) -> ScenarioConfig:
    table = scenario_table()
    if letter not in table:
        raise ValueError(f"unknown scenario {letter!r}; choose from {sorted(table)}")
    return replace(table[letter], **overrides) if overrides else table[letter]


def scenario_table_json() -> str:
    """JSON rendering of the scenario table (what ships as data/scenarios.json)."""
    payload = {
        name: {
            "covariate_mode": cfg.covariate_mode,
            "treatment_kind": cfg.treatment_kind,
            "confounding_level": cfg.confounding_level,
            "pool_size_g": cfg.pool_size_g,
        }
        for name, cfg in scenario_table().items()
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def load_scenarios_resource() -> dict:
    with resources.files("privitr").joinpath("data/scenarios.json").open() as fh:
        return json.load(fh)


def substream(base_seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one (replicate, stream, ...) coordinate."""
    return np.random.default_rng(np.random.SeedSequence(entropy=base_seed, spawn_key=path))


def pooling_seed(config: ScenarioConfig, replicate: int) -> int:
    return int(substream(config.base_seed, replicate, _STREAM_POOLING).integers(2**63))


def centre_sizes(n_total: int, n_centres: int) -> list[int]:
    base, rem = divmod(n_total, n_centres)
    return [base + (1 if k < rem else 0) for k in range(n_centres)]


def _draw_covariates(dist: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if dist == "normal_10_1":
        return rng.normal(10.0, 1.0, size=n)
    if dist == "uniform_6_14":
        return rng.uniform(6.0, 14.0, size=n)
    if dist == "lognormal_0.7_0.5":
        # log-scale mean 0.7 and sd 0.5
        return rng.lognormal(mean=0.7, sigma=0.5, size=n)
    raise ValueError(f"unknown covariate distribution {dist!r}")


def generate_covariates(config: ScenarioConfig, replicate: int, centre: int, n: int) -> np.ndarray:
    """Covariates for one centre (1-based) of one replicate."""
    if not 1 <= centre <= config.n_centres:
        raise ValueError(f"centre must be in 1..{config.n_centres}")
    rng = substream(config.base_seed, replicate, _STREAM_COVARIATE, centre)
    if config.covariate_mode == "identical":
        dist = "normal_10_1"
    else:
        dist = config.centre_distributions[centre - 1]
    return _draw_covariates(dist, n, rng)


def generate_binary_treatment(x: np.ndarray, rho: float,
                              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Bernoulli treatment with P(A=1|x) = 1 / (1 + rho e^{-(x-10)})."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    p = 1.0 / (1.0 + rho * np.exp(-(np.asarray(x, dtype=float) - 10.0)))
    a = (rng.random(len(p)) < p).astype(float)
    return a, p


def generate_continuous_treatment(x: np.ndarray, sd_a: float,
                                  rng: np.random.Generator) -> np.ndarray:
    """Gaussian dose centred at the covariate: A ~ N(x, sd_a)."""
    if sd_a <= 0:
        raise ValueError("sd_a must be positive")
    return rng.normal(np.asarray(x, dtype=float), sd_a)


def treatment_free_surface(x: np.ndarray) -> np.ndarray:
    return np.log(x) + np.sin(x) + x


def generate_outcome(x: np.ndarray, a: np.ndarray, true_psi: tuple[float, float],
                     rng: np.random.Generator | None, noise_sd: float = 1.0) -> np.ndarray:
    """y = log(x) + sin(x) + x + a (psi0 + psi1 x) + eps, eps ~ N(0, noise_sd)."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(x <= 0):
        raise NonPositiveCovariate("outcome model takes log(x); covariates must be positive")
    psi0, psi1 = true_psi
    mean = treatment_free_surface(x) + a * (psi0 + psi1 * x)
    if noise_sd == 0.0 or rng is None:
        return mean
    return mean + rng.normal(0.0, noise_sd, size=len(x))


def generate_replicate(config: ScenarioConfig, replicate: int,
                       noise_sd: float = 1.0) -> Dataset:
    """One complete dataset: covariates per centre, treatment, outcome."""
    sizes = centre_sizes(config.n_total, config.n_centres)
    xs, sites = [], []
    for centre, n_k in enumerate(sizes, start=1):
        xs.append(generate_covariates(config, replicate, centre, n_k))
        sites.extend([str(centre)] * n_k)
    x = np.concatenate(xs)
    rng_t = substream(config.base_seed, replicate, _STREAM_TREATMENT)
    propensity = None
    if config.treatment_kind == "binary":
        a, propensity = generate_binary_treatment(x, config.rho, rng_t)
    else:
        a = generate_continuous_treatment(x, config.sd_a, rng_t)
    rng_e = substream(config.base_seed, replicate, _STREAM_NOISE)
    y = generate_outcome(x, a, config.true_psi, rng_e, noise_sd=noise_sd)
    covariates = {"x": x, "log_x": np.log(x), "sin_x": np.sin(x)}
    return Dataset(site=np.asarray(sites, dtype=object), covariates=covariates,
                   treatment=a, outcome=y, propensity=propensity)


# ---------------------------------------------------------------------------
# Application-style generator: many predictors, quadratic blip in the dose.
# ---------------------------------------------------------------------------

DEFAULT_SITE_SIZES = (32, 193, 325, 198, 93, 160, 273, 179, 274)


@dataclass(frozen=True)
class PredictorSpec:
    name: str
    kind: str  # "normal" | "bernoulli" | "categorical"
    params: Mapping

    def column_names(self) -> list[str]:
        if self.kind == "categorical":
            levels = list(self.params["levels"])
            return [f"{self.name}_{lv}" for lv in levels[1:]]  # first level is reference
        return [self.name]


@dataclass(frozen=True)
class ApplicationConfig:
    """Coefficient sets for the dosing-demo generator.

    These are synthetic placeholders chosen for a plausible demonstration,
    not estimates from any real cohort; supply your own coefficients for a
    study-specific generator.
    """

    predictors: tuple[PredictorSpec, ...]
    treatment_coefficients: Mapping[str, float]  # keyed by column name, plus "intercept"
    outcome_tf_coefficients: Mapping[str, float]
    psi01: float
    psi11: Mapping[str, float]
    psi02: float
    psi12: Mapping[str, float]
    treatment_sd: float | None = None  # None: SD of the fitted linear predictor
    outcome_sd: float | None = None


def default_application_config() -> ApplicationConfig:
    predictors = (
        PredictorSpec("age_group", "normal", {"mean": 5.0, "sd": 2.0}),
        PredictorSpec("weight_c", "normal", {"mean": 0.0, "sd": 18.0}),
        PredictorSpec("height_c", "normal", {"mean": 0.0, "sd": 10.0}),
        PredictorSpec("enzyme", "bernoulli", {"p": 0.05}),
        PredictorSpec("amiodarone", "bernoulli", {"p": 0.07}),
        PredictorSpec("female", "bernoulli", {"p": 0.45}),
        PredictorSpec("race", "categorical",
                      {"levels": ["white", "black", "asian"], "probs": [0.55, 0.15, 0.30]}),
        PredictorSpec("genotype_a", "categorical",
                      {"levels": ["aa", "ab", "bb"], "probs": [0.4, 0.4, 0.2]}),
    )
    treatment = {
        "intercept": 32.0, "age_group": -1.1, "weight_c": 0.12, "height_c": 0.08,
        "enzyme": 9.0, "amiodarone": -6.0, "female": -2.0,
        "race_black": 4.0, "race_asian": -7.0, "genotype_a_ab": -4.0, "genotype_a_bb": -9.0,
    }
    tf = {
        "intercept": -0.55, "age_group": 0.004, "weight_c": 0.001, "height_c": 0.001,
        "enzyme": -0.05, "amiodarone": -0.03, "female": 0.01,
        "race_black": -0.02, "race_asian": 0.02, "genotype_a_ab": 0.01, "genotype_a_bb": 0.02,
    }
    psi11 = {
        "age_group": -2e-4, "weight_c": 4e-5, "height_c": 3e-5, "enzyme": 1.5e-3,
        "amiodarone": -1e-3, "female": -4e-4, "race_black": 8e-4, "race_asian": -1.2e-3,
        "genotype_a_ab": -6e-4, "genotype_a_bb": -1.1e-3,
    }
    psi12 = {name: -v / 90.0 for name, v in psi11.items()}
    return ApplicationConfig(
        predictors=predictors,
        treatment_coefficients=treatment,
        outcome_tf_coefficients=tf,
        psi01=8e-3, psi11=psi11,
        psi02=-1.2e-4, psi12=psi12,
        treatment_sd=None, outcome_sd=None,
    )


def _draw_predictors(config: ApplicationConfig, n: int,
                     rng: np.random.Generator) -> dict[str, np.ndarray]:
    cols: dict[str, np.ndarray] = {}
    for spec in config.predictors:
        if spec.kind == "normal":
            cols[spec.name] = rng.normal(spec.params["mean"], spec.params["sd"], size=n)
        elif spec.kind == "bernoulli":
            cols[spec.name] = (rng.random(n) < spec.params["p"]).astype(float)
        elif spec.kind == "categorical":
            levels = list(spec.params["levels"])
            probs = np.asarray(spec.params["probs"], dtype=float)
            draw = rng.choice(len(levels), size=n, p=probs / probs.sum())
            for j, lv in enumerate(levels[1:], start=1):
                cols[f"{spec.name}_{lv}"] = (draw == j).astype(float)
        else:
            raise ValueError(f"unknown predictor kind {spec.kind!r}")
    return cols


def _linear_predictor(coefs: Mapping[str, float], cols: Mapping[str, np.ndarray],
                      n: int) -> np.ndarray:
    eta = np.full(n, float(coefs.get("intercept", 0.0)))
    for name, value in coefs.items():
        if name == "intercept":
            continue
        if name not in cols:
            raise ConfigMissing(f"coefficient {name!r} references no generated predictor")
        eta = eta + value * cols[name]
    return eta


def generate_application_style(site_sizes: Sequence[int] = DEFAULT_SITE_SIZES,
                               seed: int | None = None,
                               config: ApplicationConfig | None = None) -> Dataset:
    """Multi-predictor dataset with a dose-quadratic blip, split over sites."""
    if seed is None:
        raise ValueError("generate_application_style requires an explicit seed")
    if config is None:
        raise ConfigMissing(
            "generate_application_style needs an ApplicationConfig; "
            "default_application_config() provides a synthetic demo set"
        )
    n = int(sum(site_sizes))
    rng = substream(seed, 0)
    cols = _draw_predictors(config, n, rng)
    eta_t = _linear_predictor(config.treatment_coefficients, cols, n)
    sd_t = config.treatment_sd if config.treatment_sd is not None else float(np.std(eta_t))
    if sd_t <= 0:
        raise ValueError("treatment linear predictor is constant; supply treatment_sd")
    a = rng.normal(eta_t, sd_t)

    c1 = config.psi01 + _linear_predictor({**config.psi11}, cols, n)
    c2 = config.psi02 + _linear_predictor({**config.psi12}, cols, n)
    mean_y = _linear_predictor(config.outcome_tf_coefficients, cols, n) + a * c1 + a * a * c2
    sd_y = config.outcome_sd if config.outcome_sd is not None else float(np.std(mean_y))
    if sd_y <= 0:
        sd_y = 1.0
    y = rng.normal(mean_y, sd_y)

    sites = np.concatenate([
        np.full(sz, str(k + 1), dtype=object) for k, sz in enumerate(site_sizes)
    ])
    return Dataset(site=sites, covariates=cols, treatment=a, outcome=y)
