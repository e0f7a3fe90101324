"""Covariate microaggregation: random pooling of subjects and pooled fits.

Three pooling strategies are supported:

1. cross-centre pools of size g (subjects mixed across centres);
2. per-centre pools with one common size g;
3. per-centre pools with centre-specific sizes g_k.

Subjects that do not fill a complete pool are excluded uniformly at random
(N mod g overall for strategy 1, n_k mod g per centre otherwise).

Aggregation sums outcome, treatment and every treatment-free basis column
within each pool, and forms treatment-weighted blip columns
sum(a_i b(x_i)) / sum(a_i) so that the pooled outcome model keeps the
individual-level blip coefficients. The pooled design's intercept column is
the pool size: summing the individual intercept term over a pool of size g
yields g * beta0, which matters when pool sizes vary.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import weights as weights_mod
from .basis import evaluate_many
from .dataset import Dataset
from .errors import EmptyCentre, PoolSizeExceedsCentre
from .gdwols import (
    COMBINED_TF,
    METHOD_POOLED,
    QUADRATIC,
    BlipEstimate,
    DesignSpec,
    extract_psi,
)
from . import glm

STRATEGY_CROSS_CENTRE = 1
STRATEGY_PER_CENTRE_COMMON = 2
STRATEGY_PER_CENTRE_VARYING = 3

STRATEGY_NAMES = {
    STRATEGY_CROSS_CENTRE: "cross_centre",
    STRATEGY_PER_CENTRE_COMMON: "per_centre_common_g",
    STRATEGY_PER_CENTRE_VARYING: "per_centre_varying_g",
}


@dataclass(frozen=True)
class PoolAssignment:
    strategy: int
    pool_of: np.ndarray  # pool id per subject, -1 for excluded subjects
    excluded: np.ndarray  # subject indices left out
    pool_sizes: np.ndarray  # size per pool id
    pool_centre: np.ndarray | None  # centre label per pool (None for strategy 1)
    seed: int

    @property
    def n_pools(self) -> int:
        return len(self.pool_sizes)


def _canonical_pool_order(pool_of: np.ndarray, sizes: np.ndarray,
                          centres: np.ndarray | None):
    """Renumber pools by their first member's row index.

    Pure relabeling: memberships are untouched, but pooled outputs come out
    in a canonical order (and with g=1 the pooled rows reproduce the original
    row order exactly).
    """
    n_pools = len(sizes)
    first = np.full(n_pools, len(pool_of), dtype=int)
    kept = pool_of >= 0
    np.minimum.at(first, pool_of[kept], np.flatnonzero(kept))
    order = np.argsort(first, kind="stable")
    rank = np.empty(n_pools, dtype=int)
    rank[order] = np.arange(n_pools)
    new_pool_of = np.where(kept, rank[np.where(kept, pool_of, 0)], -1)
    new_centres = None if centres is None else centres[order]
    return new_pool_of, sizes[order], new_centres


def assign_pools(data: Dataset, strategy: int, g: int | None = None,
                 g_by_centre: Mapping[str, int] | None = None,
                 seed: int | None = None) -> PoolAssignment:
    """Randomly partition subjects into pools following one strategy.

    Strategy 1 and 2 take a single pool size `g`; strategy 3 takes
    `g_by_centre` mapping every centre label to its size. The partition is
    deterministic given `seed`.
    """
    if strategy not in STRATEGY_NAMES:
        raise ValueError(f"strategy must be one of {sorted(STRATEGY_NAMES)}, got {strategy}")
    if seed is None:
        raise ValueError("assign_pools requires an explicit seed")
    if data.n == 0:
        raise EmptyCentre("dataset has no subjects")
    rng = np.random.default_rng(seed)
    pool_of = np.full(data.n, -1, dtype=int)
    sizes: list[int] = []
    centres: list[str] = []

    if strategy == STRATEGY_CROSS_CENTRE:
        if g is None or g < 1:
            raise ValueError("strategy 1 needs a pool size g >= 1")
        perm = rng.permutation(data.n)
        n_pools = data.n // g
        for k in range(n_pools):
            pool_of[perm[k * g:(k + 1) * g]] = k
            sizes.append(g)
        excluded = np.sort(perm[n_pools * g:])
        pool_of, sizes_arr, _ = _canonical_pool_order(pool_of, np.asarray(sizes, dtype=int), None)
        return PoolAssignment(strategy, pool_of, excluded, sizes_arr, None, seed)

    labels = np.asarray([str(s) for s in data.site])
    centre_labels = sorted(set(labels))
    if strategy == STRATEGY_PER_CENTRE_COMMON:
        if g is None or g < 1:
            raise ValueError("strategy 2 needs a pool size g >= 1")
        g_of = {c: int(g) for c in centre_labels}
    else:
        if not g_by_centre:
            raise ValueError("strategy 3 needs g_by_centre")
        missing = [c for c in g_by_centre if c not in centre_labels]
        if missing:
            raise EmptyCentre(f"g_by_centre names absent centres: {missing}")
        absent = [c for c in centre_labels if c not in g_by_centre]
        if absent:
            raise ValueError(f"g_by_centre misses centres present in the data: {absent}")
        g_of = {c: int(v) for c, v in g_by_centre.items()}

    excluded_parts = []
    next_pool = 0
    for centre in centre_labels:
        idx = np.flatnonzero(labels == centre)
        g_k = g_of[centre]
        if g_k < 1:
            raise ValueError(f"pool size for centre {centre!r} must be >= 1")
        if g_k > len(idx):
            raise PoolSizeExceedsCentre(
                f"centre {centre!r} has {len(idx)} subjects, fewer than pool size {g_k}"
            )
        perm = idx[rng.permutation(len(idx))]
        n_pools = len(idx) // g_k
        for k in range(n_pools):
            pool_of[perm[k * g_k:(k + 1) * g_k]] = next_pool
            sizes.append(g_k)
            centres.append(centre)
            next_pool += 1
        excluded_parts.append(perm[n_pools * g_k:])
    excluded = np.sort(np.concatenate(excluded_parts)) if excluded_parts else np.empty(0, int)
    pool_of, sizes_arr, centres_arr = _canonical_pool_order(
        pool_of, np.asarray(sizes, dtype=int), np.asarray(centres, dtype=object)
    )
    return PoolAssignment(strategy, pool_of, excluded, sizes_arr, centres_arr, seed)


@dataclass(frozen=True)
class PooledDataset:
    pool_ids: np.ndarray
    pool_sizes: np.ndarray
    pool_centre: np.ndarray | None
    y_pool: np.ndarray
    a_pool: np.ndarray
    tf_sums: dict[str, np.ndarray]  # keyed by treatment-free column name
    basis_sums: dict[str, np.ndarray]  # plain pooled sums usable as covariates
    blip_weighted: dict[str, np.ndarray]  # sum(a b(x)) / sum(a) per blip column
    a_sq_pool: np.ndarray | None = None  # sum(a^2), quadratic blip only
    blip_weighted_sq: dict[str, np.ndarray] | None = None  # sum(a^2 b(x)) / sum(a^2)

    @property
    def n_pools(self) -> int:
        return len(self.pool_ids)


def _pool_sum(values: np.ndarray, pool_of: np.ndarray, n_pools: int) -> np.ndarray:
    keep = pool_of >= 0
    return np.bincount(pool_of[keep], weights=values[keep], minlength=n_pools)


def _ratio_or_zero(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    nz = den != 0.0
    out[nz] = num[nz] / den[nz]
    return out


def aggregate(data: Dataset, assignment: PoolAssignment, spec: DesignSpec,
              extra_bases: tuple[str, ...] = ()) -> PooledDataset:
    """Collapse individual rows into pooled rows.

    `extra_bases` names additional basis expressions whose plain pooled sums
    must be available (typically the pooled treatment model's covariates).
    """
    n_pools = assignment.n_pools
    pool_of = assignment.pool_of
    a = data.treatment
    y_pool = _pool_sum(data.outcome, pool_of, n_pools)
    a_pool = _pool_sum(a, pool_of, n_pools)

    tf_exprs = spec.treatment_free_basis
    tf_cols = evaluate_many(tf_exprs, data.covariates)
    tf_sums: dict[str, np.ndarray] = {}
    basis_sums: dict[str, np.ndarray] = {}
    if spec.combined_tf_column:
        combined = np.sum(tf_cols, axis=0) if tf_cols else np.zeros(data.n)
        tf_sums[COMBINED_TF] = _pool_sum(combined, pool_of, n_pools)
    for expr, col in zip(tf_exprs, tf_cols):
        summed = _pool_sum(col, pool_of, n_pools)
        basis_sums[expr] = summed
        if not spec.combined_tf_column:
            tf_sums[expr] = summed
    for expr in extra_bases:
        if expr not in basis_sums:
            col = evaluate_many((expr,), data.covariates)[0]
            basis_sums[expr] = _pool_sum(col, pool_of, n_pools)

    blip_cols = evaluate_many(spec.blip_basis, data.covariates)
    blip_weighted = {
        expr: _ratio_or_zero(_pool_sum(a * col, pool_of, n_pools), a_pool)
        for expr, col in zip(spec.blip_basis, blip_cols)
    }
    a_sq_pool = None
    blip_weighted_sq = None
    if spec.blip_order == QUADRATIC:
        a_sq = a * a
        a_sq_pool = _pool_sum(a_sq, pool_of, n_pools)
        blip_weighted_sq = {
            expr: _ratio_or_zero(_pool_sum(a_sq * col, pool_of, n_pools), a_sq_pool)
            for expr, col in zip(spec.blip_basis, blip_cols)
        }
    return PooledDataset(
        pool_ids=np.arange(n_pools),
        pool_sizes=assignment.pool_sizes.copy(),
        pool_centre=None if assignment.pool_centre is None else assignment.pool_centre.copy(),
        y_pool=y_pool,
        a_pool=a_pool,
        tf_sums=tf_sums,
        basis_sums=basis_sums,
        blip_weighted=blip_weighted,
        a_sq_pool=a_sq_pool,
        blip_weighted_sq=blip_weighted_sq,
    )


def build_pooled_design(pooled: PooledDataset, spec: DesignSpec) -> tuple[np.ndarray, tuple[str, ...]]:
    """Pooled outcome design with the same column names as the individual one."""
    cols = [pooled.pool_sizes.astype(float)]
    for name in spec.tf_column_names():
        cols.append(pooled.tf_sums[name])
    cols.append(pooled.a_pool)
    for expr in spec.blip_basis:
        cols.append(pooled.a_pool * pooled.blip_weighted[expr])
    if spec.blip_order == QUADRATIC:
        cols.append(pooled.a_sq_pool)
        for expr in spec.blip_basis:
            cols.append(pooled.a_sq_pool * pooled.blip_weighted_sq[expr])
    return np.column_stack(cols), spec.column_names()


def pooled_weight_vector(pooled: PooledDataset, weight_spec: weights_mod.TreatmentModelSpec,
                         cap: float | None = None) -> weights_mod.WeightVector:
    if not weight_spec.pooled:
        raise ValueError("pooled fits need a pooled treatment model spec")
    if weight_spec.kind == "binary":
        return weights_mod.pooled_binary_weights(pooled, weight_spec)
    return weights_mod.pooled_continuous_ipw_weights(pooled, weight_spec, cap)


def fit_pooled_gdwols(pooled: PooledDataset, spec: DesignSpec,
                      weight_spec: weights_mod.TreatmentModelSpec,
                      cap: float | None = None) -> BlipEstimate:
    """Pooled-data blip estimate: pooled weights, then WLS on the pooled design."""
    wv = pooled_weight_vector(pooled, weight_spec, cap)
    design, columns = build_pooled_design(pooled, spec)
    fit = glm.fit_wls(design, pooled.y_pool, wv.values)
    psi, psi_names, se = extract_psi(fit.theta, columns, spec, fit.model_covariance)
    diagnostics = {
        "n_pools": pooled.n_pools,
        "condition_estimate": fit.condition_estimate,
        "residual_sd": fit.residual_sd,
        "sum_weights": float(wv.values.sum()),
        "weight_scheme": wv.scheme,
        "weight_capped": wv.capped,
        "weight_min": float(wv.values.min()),
        "weight_max": float(wv.values.max()),
        "weight_mean": float(wv.values.mean()),
    }
    return BlipEstimate(
        theta=fit.theta, columns=columns, psi=psi, psi_names=psi_names,
        psi_standard_errors=se, method_tag=METHOD_POOLED,
        blip_order=spec.blip_order, blip_basis=spec.blip_basis,
        diagnostics=diagnostics,
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_pooled_csv(pooled: PooledDataset, spec: DesignSpec, path: str | Path,
                     config: Mapping | None = None) -> None:
    """Export pooled rows, the only thing a site would ever ship.

    Column order: pool_id, pool_size, y_pool, treatment-free sums, a_pool,
    weighted blip columns (then quadratic blocks and any extra pooled sums).
    """
    path = Path(path)
    tf_names = list(spec.tf_column_names())
    blip_w_names = [f"aw*{b}" for b in spec.blip_basis]
    header = ["pool_id", "pool_size", "y_pool"] + tf_names + ["a_pool"] + blip_w_names
    quad = spec.blip_order == QUADRATIC
    if quad:
        header += ["a_sq_pool"] + [f"a2w*{b}" for b in spec.blip_basis]
    extra = [name for name in pooled.basis_sums if name not in set(tf_names)]
    header += [f"sum*{name}" for name in extra]
    with path.open("w", newline="") as fh:
        if config is not None:
            fh.write("# " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(pooled.n_pools):
            row = [str(int(pooled.pool_ids[i])), str(int(pooled.pool_sizes[i])),
                   _fmt(pooled.y_pool[i])]
            row += [_fmt(pooled.tf_sums[n][i]) for n in tf_names]
            row.append(_fmt(pooled.a_pool[i]))
            row += [_fmt(pooled.blip_weighted[b][i]) for b in spec.blip_basis]
            if quad:
                row.append(_fmt(pooled.a_sq_pool[i]))
                row += [_fmt(pooled.blip_weighted_sq[b][i]) for b in spec.blip_basis]
            row += [_fmt(pooled.basis_sums[n][i]) for n in extra]
            writer.writerow(row)


def read_pooled_csv(path: str | Path, spec: DesignSpec) -> PooledDataset:
    """Load pooled rows written by `write_pooled_csv` for the same design spec."""
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    if not body:
        raise ValueError(f"{path}: no pooled rows")
    col = {name: np.asarray([r[i] for r in body], dtype=float)
           for i, name in enumerate(header) if name != "pool_id"}
    pool_ids = np.asarray([int(float(r[header.index("pool_id")])) for r in body])
    tf_names = list(spec.tf_column_names())
    tf_sums = {n: col[n] for n in tf_names}
    basis_sums = dict(tf_sums)
    for name in header:
        if name.startswith("sum*"):
            basis_sums[name[len("sum*"):]] = col[name]
    blip_weighted = {b: col[f"aw*{b}"] for b in spec.blip_basis}
    a_sq_pool = None
    blip_weighted_sq = None
    if spec.blip_order == QUADRATIC:
        a_sq_pool = col["a_sq_pool"]
        blip_weighted_sq = {b: col[f"a2w*{b}"] for b in spec.blip_basis}
    return PooledDataset(
        pool_ids=pool_ids,
        pool_sizes=col["pool_size"].astype(int),
        pool_centre=None,
        y_pool=col["y_pool"],
        a_pool=col["a_pool"],
        tf_sums=tf_sums,
        basis_sums=basis_sums,
        blip_weighted=blip_weighted,
        a_sq_pool=a_sq_pool,
        blip_weighted_sq=blip_weighted_sq,
    )
