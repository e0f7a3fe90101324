"""Doubly robust blip estimation by weighted least squares.

The outcome model is split into a treatment-free part (covariates only) and a
blip part carrying every treatment term: a * (psi0 + psi1' b(x)) for the
linear blip, plus a^2 * (psi02 + psi12' b(x)) for the quadratic one. Fitting
the combined design by weighted least squares with balancing weights gives
consistent blip coefficients when either the treatment-free model or the
treatment model is correct.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import glm
from .basis import evaluate_many, validate_unique
from .dataset import Dataset

LINEAR = "linear"
QUADRATIC = "quadratic"

METHOD_GOLD = "gold_standard"
METHOD_POOLED = "pooled"
METHOD_DISTRIBUTED = "distributed"

INTERCEPT = "intercept"
COMBINED_TF = "tf"
TREATMENT_COL = "a"
TREATMENT_SQ_COL = "a^2"


@dataclass(frozen=True)
class DesignSpec:
    """Declarative description of the outcome design.

    `combined_tf_column` collapses the treatment-free basis into a single
    column equal to the sum of its components (the layout used when all
    treatment-free coefficients are constrained equal); the default keeps one
    column per basis expression.
    """

    treatment_free_basis: tuple[str, ...]
    blip_basis: tuple[str, ...]
    blip_order: str = LINEAR
    combined_tf_column: bool = False

    def __post_init__(self):
        if self.blip_order not in (LINEAR, QUADRATIC):
            raise ValueError(f"blip_order must be '{LINEAR}' or '{QUADRATIC}'")
        object.__setattr__(self, "treatment_free_basis", tuple(self.treatment_free_basis))
        object.__setattr__(self, "blip_basis", tuple(self.blip_basis))
        validate_unique(self.column_names(), "design column")

    def tf_column_names(self) -> tuple[str, ...]:
        if self.combined_tf_column:
            return (COMBINED_TF,)
        return self.treatment_free_basis

    def blip_column_names(self) -> tuple[str, ...]:
        names = [TREATMENT_COL] + [f"a*{b}" for b in self.blip_basis]
        if self.blip_order == QUADRATIC:
            names += [TREATMENT_SQ_COL] + [f"a^2*{b}" for b in self.blip_basis]
        return tuple(names)

    def column_names(self) -> tuple[str, ...]:
        return (INTERCEPT,) + self.tf_column_names() + self.blip_column_names()


@dataclass(frozen=True)
class DoseRange:
    a_min: float
    a_max: float

    def __post_init__(self):
        if not self.a_min < self.a_max:
            raise ValueError(f"dose range needs a_min < a_max, got [{self.a_min}, {self.a_max}]")


@dataclass(frozen=True)
class DoseDecision:
    dose: float
    at_boundary: bool
    degenerate_flat: bool


@dataclass(frozen=True)
class BlipEstimate:
    theta: np.ndarray
    columns: tuple[str, ...]
    psi: np.ndarray
    psi_names: tuple[str, ...]
    psi_standard_errors: np.ndarray
    method_tag: str
    blip_order: str
    blip_basis: tuple[str, ...]
    diagnostics: dict = field(default_factory=dict)

    def coefficient(self, name: str) -> float:
        return float(self.theta[self.columns.index(name)])


def build_outcome_design(data: Dataset, spec: DesignSpec) -> tuple[np.ndarray, tuple[str, ...]]:
    """Assemble the outcome design matrix and its column names."""
    if data.n < 1:
        raise ValueError("dataset is empty")
    tf_cols = evaluate_many(spec.treatment_free_basis, data.covariates)
    if spec.combined_tf_column:
        tf_cols = [np.sum(tf_cols, axis=0)] if tf_cols else []
    blip_cols = evaluate_many(spec.blip_basis, data.covariates)
    a = data.treatment
    columns = [np.ones(data.n)] + tf_cols + [a] + [a * b for b in blip_cols]
    if spec.blip_order == QUADRATIC:
        a2 = a * a
        columns += [a2] + [a2 * b for b in blip_cols]
    return np.column_stack(columns), spec.column_names()


def _weight_values(weights) -> tuple[np.ndarray, dict]:
    if hasattr(weights, "values") and hasattr(weights, "scheme"):
        w = np.asarray(weights.values, dtype=float)
        info = {"weight_scheme": weights.scheme, "weight_capped": weights.capped}
    else:
        w = np.asarray(weights, dtype=float)
        info = {"weight_scheme": "external"}
    info.update(
        weight_min=float(w.min()), weight_max=float(w.max()), weight_mean=float(w.mean())
    )
    return w, info


def extract_psi(theta: np.ndarray, columns: tuple[str, ...], spec: DesignSpec,
                covariance: np.ndarray | None = None):
    """Pull the blip subvector (and its standard errors) out of a full fit."""
    psi_names = spec.blip_column_names()
    idx = [columns.index(name) for name in psi_names]
    psi = np.asarray([theta[i] for i in idx])
    if covariance is None:
        se = np.full(len(idx), np.nan)
    else:
        se = np.sqrt(np.asarray([max(covariance[i, i], 0.0) for i in idx]))
    return psi, psi_names, se


def fit_gdwols(data: Dataset, spec: DesignSpec, weights,
               method_tag: str = METHOD_GOLD) -> BlipEstimate:
    """Weighted least squares on the outcome design; returns the blip estimate."""
    design, columns = build_outcome_design(data, spec)
    w, weight_info = _weight_values(weights)
    fit = glm.fit_wls(design, data.outcome, w)
    psi, psi_names, se = extract_psi(fit.theta, columns, spec, fit.model_covariance)
    diagnostics = {
        "n": data.n,
        "condition_estimate": fit.condition_estimate,
        "residual_sd": fit.residual_sd,
        "sum_weights": float(w.sum()),
        **weight_info,
    }
    return BlipEstimate(
        theta=fit.theta, columns=columns, psi=psi, psi_names=psi_names,
        psi_standard_errors=se, method_tag=method_tag,
        blip_order=spec.blip_order, blip_basis=spec.blip_basis,
        diagnostics=diagnostics,
    )


def estimate_to_dict(estimate: BlipEstimate, config: Mapping | None = None) -> dict:
    """JSON-ready rendering of a blip estimate (round-trips via estimate_from_dict)."""
    out = {
        "method": estimate.method_tag,
        "columns": list(estimate.columns),
        "theta": [float(v) for v in estimate.theta],
        "psi_names": list(estimate.psi_names),
        "psi": [float(v) for v in estimate.psi],
        "psi_standard_errors": [float(v) for v in estimate.psi_standard_errors],
        "blip_order": estimate.blip_order,
        "blip_basis": list(estimate.blip_basis),
        "diagnostics": estimate.diagnostics,
    }
    if config is not None:
        out["config"] = dict(config)
    return out


def estimate_from_dict(obj: Mapping) -> BlipEstimate:
    return BlipEstimate(
        theta=np.asarray(obj["theta"], dtype=float),
        columns=tuple(obj["columns"]),
        psi=np.asarray(obj["psi"], dtype=float),
        psi_names=tuple(obj["psi_names"]),
        psi_standard_errors=np.asarray(obj["psi_standard_errors"], dtype=float),
        method_tag=str(obj["method"]),
        blip_order=str(obj["blip_order"]),
        blip_basis=tuple(obj["blip_basis"]),
        diagnostics=dict(obj.get("diagnostics", {})),
    )


def _blip_slopes(estimate: BlipEstimate, covariates: Mapping[str, float]) -> tuple[float, float]:
    """Evaluate (c1, c2) so that the blip at covariates x is c1*a + c2*a^2."""
    point = {k: np.asarray([float(v)]) for k, v in covariates.items()}
    basis_vals = [float(col[0]) for col in evaluate_many(estimate.blip_basis, point)]
    k = 1 + len(estimate.blip_basis)
    c1 = float(estimate.psi[0]) + float(np.dot(estimate.psi[1:k], basis_vals))
    if estimate.blip_order != QUADRATIC:
        return c1, 0.0
    c2 = float(estimate.psi[k]) + float(np.dot(estimate.psi[k + 1:], basis_vals))
    return c1, c2


def optimal_binary_rule(estimate: BlipEstimate, covariates: Mapping[str, float]) -> int:
    """Treat (1) iff the blip at a=1 is strictly positive; ties go to 0."""
    if estimate.blip_order != LINEAR:
        raise ValueError("optimal_binary_rule needs a linear blip estimate")
    c1, _ = _blip_slopes(estimate, covariates)
    return 1 if c1 > 0.0 else 0


DEGENERATE_EPS = 1e-12


def optimal_dose(estimate: BlipEstimate, covariates: Mapping[str, float],
                 dose_range: DoseRange) -> DoseDecision:
    """Dose maximizing the quadratic blip, clamped to the allowed range.

    Returns the stationary point when the parabola opens downward and the
    point lies inside the range; otherwise whichever endpoint gives the
    larger blip value. A blip that is flat in the dose is flagged degenerate
    and resolved to a_min.
    """
    if estimate.blip_order != QUADRATIC:
        raise ValueError("optimal_dose needs a quadratic blip estimate")
    c1, c2 = _blip_slopes(estimate, covariates)
    if abs(c2) < DEGENERATE_EPS and abs(c1) < DEGENERATE_EPS:
        return DoseDecision(dose=dose_range.a_min, at_boundary=True, degenerate_flat=True)
    if c2 < 0.0:
        vertex = -c1 / (2.0 * c2)
        if dose_range.a_min <= vertex <= dose_range.a_max:
            return DoseDecision(dose=float(vertex), at_boundary=False, degenerate_flat=False)

    def blip(a: float) -> float:
        return c1 * a + c2 * a * a

    lo, hi = dose_range.a_min, dose_range.a_max
    dose = hi if blip(hi) > blip(lo) else lo
    return DoseDecision(dose=float(dose), at_boundary=True, degenerate_flat=False)
