"""Balancing weights derived from treatment (propensity) models.

Binary treatments use w = |a - p_hat| from a logistic (or binomial, for
pooled data) model. Continuous treatments use inverse Gaussian-density
weights w = 1 / phi(a; mu_hat, sigma_hat) where mu_hat comes from a linear
model of treatment on the covariate basis and sigma_hat is its residual
standard deviation.

Weight capping is off by default on purpose: large continuous-treatment
weights are a real failure mode of the method and the default behaviour must
exhibit it. Pass `cap` explicitly to truncate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import glm
from .basis import evaluate_many, validate_unique
from .dataset import Dataset
from .errors import DegenerateTreatment, NonConvergence

if TYPE_CHECKING:
    from .pooling import PooledDataset

SIGMA_FLOOR = 1e-10

SCHEME_BINARY = "abs_residual_binary"
SCHEME_CONTINUOUS = "ipw_continuous"
SCHEME_POOLED_BINARY = "abs_residual_pooled_binomial"
SCHEME_POOLED_CONTINUOUS = "ipw_pooled_gaussian"


@dataclass(frozen=True)
class TreatmentModelSpec:
    """Which treatment model to fit before converting it into weights.

    An empty `covariate_basis` with `include_intercept=True` is the
    intercept-only (deliberately misspecified) model. `include_intercept`
    exists because the correctly specified continuous model is a straight
    regression through the origin (treatment mean equals the covariate).
    """

    kind: str  # "binary" | "continuous"
    covariate_basis: tuple[str, ...] = ()
    pooled: bool = False
    include_intercept: bool = True

    def __post_init__(self):
        if self.kind not in ("binary", "continuous"):
            raise ValueError(f"treatment kind must be 'binary' or 'continuous', got {self.kind!r}")
        validate_unique(self.covariate_basis, "treatment basis")
        if not self.include_intercept and not self.covariate_basis:
            raise ValueError("treatment model needs an intercept or at least one basis column")


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray
    scheme: str
    max_weight: float
    capped: bool
    fit: glm.WlsFit | glm.LogisticFit

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("weights must be finite and non-negative")


def _treatment_design(spec: TreatmentModelSpec, covariates, n: int) -> np.ndarray:
    cols = []
    if spec.include_intercept:
        cols.append(np.ones(n))
    cols.extend(evaluate_many(spec.covariate_basis, covariates))
    return np.column_stack(cols)


def _check_converged(fit: glm.LogisticFit) -> glm.LogisticFit:
    if not fit.converged:
        raise NonConvergence(
            f"treatment model IRLS did not converge within {glm.IRLS_MAX_ITER} iterations"
        )
    return fit


def _gaussian_density_weights(a: np.ndarray, mu: np.ndarray, sigma: float,
                              cap: float | None) -> tuple[np.ndarray, bool]:
    if sigma < SIGMA_FLOOR:
        raise DegenerateTreatment(
            f"treatment residual sd {sigma:.3e} below {SIGMA_FLOOR:.0e}; "
            "inverse-density weights are undefined"
        )
    z = (a - mu) / sigma
    dens = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    w = 1.0 / dens
    if not np.all(np.isfinite(w)):
        raise DegenerateTreatment(
            "inverse-density weights overflowed: some observed treatments sit "
            "far outside the fitted treatment model (positivity failure)"
        )
    capped = False
    if cap is not None and np.any(w > cap):
        w = np.minimum(w, cap)
        capped = True
    return w, capped


def binary_weights(data: Dataset, spec: TreatmentModelSpec) -> WeightVector:
    """w_i = |a_i - p_hat_i| from a logistic treatment model."""
    if spec.kind != "binary" or spec.pooled:
        raise ValueError("binary_weights needs an individual-level binary spec")
    design = _treatment_design(spec, data.covariates, data.n)
    fit = _check_converged(glm.fit_logistic(design, data.treatment))
    w = np.abs(data.treatment - fit.fitted_probabilities)
    return WeightVector(values=w, scheme=SCHEME_BINARY,
                        max_weight=float(w.max()), capped=False, fit=fit)


def continuous_ipw_weights(data: Dataset, spec: TreatmentModelSpec,
                           cap: float | None = None) -> WeightVector:
    """w_i = 1 / phi(a_i; mu_hat_i, sigma_hat) from a Gaussian treatment model."""
    if spec.kind != "continuous" or spec.pooled:
        raise ValueError("continuous_ipw_weights needs an individual-level continuous spec")
    design = _treatment_design(spec, data.covariates, data.n)
    fit = glm.fit_linear_gaussian(design, data.treatment)
    mu = design @ fit.theta
    w, capped = _gaussian_density_weights(data.treatment, mu, fit.residual_sd, cap)
    return WeightVector(values=w, scheme=SCHEME_CONTINUOUS,
                        max_weight=float(w.max()), capped=capped, fit=fit)


def pooled_binary_weights(pooled: "PooledDataset", spec: TreatmentModelSpec) -> WeightVector:
    """w_k = |a_pool_k - g_k * p_hat_k| from a binomial model on pooled data.

    Pools are treated as independent binomial observations with trials equal
    to the realized pool size, so strategies with varying pool sizes are
    covered by the same likelihood.
    """
    if spec.kind != "binary" or not spec.pooled:
        raise ValueError("pooled_binary_weights needs a pooled binary spec")
    design = _treatment_design(spec, pooled.basis_sums, pooled.n_pools)
    trials = pooled.pool_sizes.astype(float)
    fit = _check_converged(glm.fit_binomial(design, pooled.a_pool, trials))
    w = np.abs(pooled.a_pool - trials * fit.fitted_probabilities)
    return WeightVector(values=w, scheme=SCHEME_POOLED_BINARY,
                        max_weight=float(w.max()), capped=False, fit=fit)


def pooled_continuous_ipw_weights(pooled: "PooledDataset", spec: TreatmentModelSpec,
                                  cap: float | None = None) -> WeightVector:
    """Inverse Gaussian-density weights for the pooled treatment totals."""
    if spec.kind != "continuous" or not spec.pooled:
        raise ValueError("pooled_continuous_ipw_weights needs a pooled continuous spec")
    design = _treatment_design(spec, pooled.basis_sums, pooled.n_pools)
    fit = glm.fit_linear_gaussian(design, pooled.a_pool)
    mu = design @ fit.theta
    w, capped = _gaussian_density_weights(pooled.a_pool, mu, fit.residual_sd, cap)
    return WeightVector(values=w, scheme=SCHEME_POOLED_CONTINUOUS,
                        max_weight=float(w.max()), capped=capped, fit=fit)
