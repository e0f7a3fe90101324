"""Dense regression numerics: weighted least squares and binomial IRLS.

Normal equations are solved by Cholesky with an SVD fallback; the condition
estimate comes from the Cholesky factor's diagonal ratio and trips
`SingularDesign` above 1e12. Everything here is a pure function of its
arguments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SeparationDetected, SingularDesign

CONDITION_LIMIT = 1e12
IRLS_TOL = 1e-10
IRLS_MAX_ITER = 50
PROB_CLAMP = 1e-12
SEPARATION_ETA = 30.0


@dataclass(frozen=True)
class WlsFit:
    theta: np.ndarray
    residual_sd: float
    model_covariance: np.ndarray
    condition_estimate: float


@dataclass(frozen=True)
class LogisticFit:
    alpha: np.ndarray
    fitted_probabilities: np.ndarray
    converged: bool
    iterations: int
    clamped: bool


def _as_matrix(design) -> np.ndarray:
    x = np.asarray(design, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionMismatch(f"design must be a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("design contains non-finite entries")
    return x


def _as_vector(v, n: int, what: str) -> np.ndarray:
    out = np.asarray(v, dtype=float).reshape(-1)
    if out.shape[0] != n:
        raise DimensionMismatch(f"{what} has length {out.shape[0]}, expected {n}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{what} contains non-finite entries")
    return out


def expit(eta: np.ndarray) -> np.ndarray:
    """Numerically stable inverse logit."""
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def solve_normal_equations(xtwx: np.ndarray, xtwy: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve A theta = b for a symmetric PSD A, returning (theta, condition estimate).

    Raises SingularDesign when the condition estimate exceeds CONDITION_LIMIT
    or the matrix is rank deficient.
    """
    a = np.asarray(xtwx, dtype=float)
    b = np.asarray(xtwy, dtype=float).reshape(-1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"normal matrix must be square, got {a.shape}")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch("normal matrix and right-hand side disagree")
    try:
        chol = np.linalg.cholesky(a)
        diag = np.diag(chol)
        cond = float((diag.max() / diag.min()) ** 2) if diag.min() > 0 else float("inf")
    except np.linalg.LinAlgError:
        chol = None
        sv = np.linalg.svd(a, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularDesign(
            f"normal equations are numerically singular "
            f"(condition estimate {cond:.3e} > {CONDITION_LIMIT:.0e})",
            condition_estimate=cond,
        )
    try:
        if chol is None:
            theta, *_ = np.linalg.lstsq(a, b, rcond=None)
        else:
            theta = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as err:
        # the diagonal-ratio estimate can land under the threshold on an
        # exactly singular matrix; trust the factorization failure instead
        raise SingularDesign(
            f"normal equations are exactly singular ({err})",
            condition_estimate=float("inf"),
        ) from err
    return theta, cond


def fit_wls(design, outcome, weights) -> WlsFit:
    """Weighted least squares via the normal equations.

    residual_sd is sqrt(sum(w_i r_i^2) / (n - p)), zero when n <= p;
    model_covariance is residual_sd^2 (X'WX)^{-1}.
    """
    x = _as_matrix(design)
    n, p = x.shape
    y = _as_vector(outcome, n, "outcome")
    w = _as_vector(weights, n, "weights")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not np.any(w > 0):
        raise ValueError("at least one weight must be positive")
    xtwx = x.T @ (w[:, None] * x)
    xtwx = 0.5 * (xtwx + xtwx.T)
    xtwy = x.T @ (w * y)
    theta, cond = solve_normal_equations(xtwx, xtwy)
    resid = y - x @ theta
    wrss = float(np.sum(w * resid * resid))
    residual_sd = float(np.sqrt(wrss / (n - p))) if n > p else 0.0
    inv = np.linalg.inv(xtwx)
    cov = residual_sd**2 * 0.5 * (inv + inv.T)
    return WlsFit(theta=theta, residual_sd=residual_sd, model_covariance=cov,
                  condition_estimate=cond)


def fit_linear_gaussian(design, treatment) -> WlsFit:
    """Ordinary least squares (unit weights); used for continuous treatment models."""
    x = _as_matrix(design)
    return fit_wls(x, treatment, np.ones(x.shape[0]))


def fit_binomial(design, successes, trials) -> LogisticFit:
    """Binomial GLM (logit link) via IRLS; `trials` may vary per row.

    Stops when the max-abs coefficient change falls below IRLS_TOL; at the
    iteration cap the best iterate is returned with converged=False. Raises
    SeparationDetected when any |linear predictor| exceeds SEPARATION_ETA
    after the final iteration.
    """
    x = _as_matrix(design)
    n, _ = x.shape
    a = _as_vector(successes, n, "successes")
    m = _as_vector(trials, n, "trials")
    if np.any(m < 1):
        raise ValueError("trials must be >= 1")
    if np.any(a < 0) or np.any(a > m):
        raise ValueError("successes must lie in [0, trials]")
    alpha = np.zeros(x.shape[1])
    clamped = False
    converged = False
    iterations = 0
    for iterations in range(1, IRLS_MAX_ITER + 1):
        eta = x @ alpha
        prob = expit(eta)
        lo, hi = PROB_CLAMP, 1.0 - PROB_CLAMP
        if np.any(prob < lo) or np.any(prob > hi):
            clamped = True
            prob = np.clip(prob, lo, hi)
        irls_w = m * prob * (1.0 - prob)
        xtwx = x.T @ (irls_w[:, None] * x)
        xtwx = 0.5 * (xtwx + xtwx.T)
        score = x.T @ (a - m * prob)
        step, _ = solve_normal_equations(xtwx, score)
        alpha = alpha + step
        if np.max(np.abs(step)) < IRLS_TOL:
            converged = True
            break
    eta = x @ alpha
    if np.max(np.abs(eta)) > SEPARATION_ETA:
        raise SeparationDetected(
            f"quasi-complete separation: max |linear predictor| = "
            f"{np.max(np.abs(eta)):.2f} > {SEPARATION_ETA}"
        )
    prob = np.clip(expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return LogisticFit(alpha=alpha, fitted_probabilities=prob,
                       converged=converged, iterations=iterations, clamped=clamped)


def fit_logistic(design, treatment) -> LogisticFit:
    """Bernoulli logistic regression; treatment entries must be 0 or 1."""
    x = _as_matrix(design)
    a = _as_vector(treatment, x.shape[0], "treatment")
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ValueError("binary treatment must contain only 0 and 1")
    return fit_binomial(x, a, np.ones_like(a))
