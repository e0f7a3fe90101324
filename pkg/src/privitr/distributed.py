"""Distributed weighted regression from per-site matrix summaries.

Each site builds its outcome design and weights locally and ships exactly two
matrix products, X'WX and X'Wy, plus metadata. The coordinator sums the
products over sites and solves the combined normal equations; for any
partition of one dataset this reproduces the centralized fit exactly when the
sites share the same weights. A design fingerprint (hash of the ordered
column names, blip order, treatment kind and weight scheme) guards against
sites silently building different designs.

Summaries serialize to JSON with floats written in shortest round-trip form,
so files are human-auditable and deserialize value-exactly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import glm
from . import weights as weights_mod
from .dataset import Dataset
from .errors import (
    DuplicateSite,
    FingerprintMismatch,
    FingerprintMissing,
    MalformedSummary,
    SingularDesign,
)
from .gdwols import METHOD_DISTRIBUTED, BlipEstimate, DesignSpec, build_outcome_design

SCHEME_EXTERNAL = "external"


def design_fingerprint(columns: tuple[str, ...], blip_order: str,
                       treatment_kind: str, weight_scheme: str) -> str:
    payload = "\x1f".join(["|".join(columns), blip_order, treatment_kind, weight_scheme])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SiteSummary:
    site_id: str
    n: int
    columns: tuple[str, ...]
    blip_order: str
    treatment_kind: str
    weight_scheme: str
    sum_weights: float
    xtwx: np.ndarray
    xtwy: np.ndarray
    fingerprint: str

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def rank_deficient_alone(self) -> bool:
        """True when this site alone could not identify the model (n < p)."""
        return self.n < self.p

    def __post_init__(self):
        if self.xtwx.shape != (self.p, self.p):
            raise ValueError(f"xtwx must be {self.p}x{self.p}, got {self.xtwx.shape}")
        if self.xtwy.shape != (self.p,):
            raise ValueError(f"xtwy must have length {self.p}")
        if not np.allclose(self.xtwx, self.xtwx.T, rtol=1e-10, atol=0.0):
            raise ValueError("xtwx must be symmetric")


def summary_from_design(site_id: str, design: np.ndarray, outcome: np.ndarray,
                        weight_values: np.ndarray, columns: tuple[str, ...],
                        blip_order: str, treatment_kind: str,
                        weight_scheme: str) -> SiteSummary:
    """Form the two matrix products from an already-built local design."""
    x = np.asarray(design, dtype=float)
    y = np.asarray(outcome, dtype=float).reshape(-1)
    w = np.asarray(weight_values, dtype=float).reshape(-1)
    if x.shape[0] != y.shape[0] or x.shape[0] != w.shape[0]:
        raise ValueError("design, outcome and weights must align")
    xtwx = x.T @ (w[:, None] * x)
    xtwx = 0.5 * (xtwx + xtwx.T)
    xtwy = x.T @ (w * y)
    return SiteSummary(
        site_id=str(site_id), n=x.shape[0], columns=tuple(columns),
        blip_order=blip_order, treatment_kind=treatment_kind,
        weight_scheme=weight_scheme, sum_weights=float(w.sum()),
        xtwx=xtwx, xtwy=xtwy,
        fingerprint=design_fingerprint(tuple(columns), blip_order, treatment_kind,
                                       weight_scheme),
    )


def compute_site_summary(site_data: Dataset, spec: DesignSpec,
                         weight_spec: weights_mod.TreatmentModelSpec,
                         cap: float | None = None,
                         external_weights: np.ndarray | None = None,
                         site_id: str | None = None) -> SiteSummary:
    """Build one site's summary; weights come from a site-local treatment fit.

    `external_weights` bypasses the local fit (used to verify the exact
    distributed/centralized equivalence; in production no rows leave a site,
    so weights are estimated locally).
    """
    if weight_spec.pooled:
        raise ValueError("site summaries use individual-level weight specs")
    labels = site_data.site_labels()
    if site_id is None:
        if len(labels) != 1:
            raise ValueError(f"site data spans several sites {labels}; pass site_id or split first")
        site_id = labels[0]
    design, columns = build_outcome_design(site_data, spec)
    if external_weights is not None:
        w = np.asarray(external_weights, dtype=float)
        scheme = SCHEME_EXTERNAL
    else:
        if weight_spec.kind == "binary":
            wv = weights_mod.binary_weights(site_data, weight_spec)
        else:
            wv = weights_mod.continuous_ipw_weights(site_data, weight_spec, cap)
        w, scheme = wv.values, wv.scheme
    return summary_from_design(site_id, design, site_data.outcome, w, columns,
                               spec.blip_order, weight_spec.kind, scheme)


@dataclass(frozen=True)
class AggregateState:
    xtwx: np.ndarray
    xtwy: np.ndarray
    site_ids: tuple[str, ...]
    site_ns: tuple[int, ...]
    total_n: int
    sum_weights: float
    columns: tuple[str, ...]
    blip_order: str
    treatment_kind: str
    weight_scheme: str
    fingerprint: str


def aggregate_summaries(summaries: list[SiteSummary]) -> AggregateState:
    """Sum site contributions in sorted-site-id order (bitwise reproducible)."""
    if not summaries:
        raise ValueError("no site summaries to aggregate")
    ids = [s.site_id for s in summaries]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise DuplicateSite(f"site ids contributed more than once: {sorted(dupes)}")
    first = summaries[0]
    for s in summaries[1:]:
        if s.fingerprint != first.fingerprint:
            raise FingerprintMismatch(
                f"site {s.site_id!r} built a different design than site "
                f"{first.site_id!r}: {s.fingerprint} != {first.fingerprint}"
            )
    ordered = sorted(summaries, key=lambda s: s.site_id)
    xtwx = np.zeros_like(first.xtwx)
    xtwy = np.zeros_like(first.xtwy)
    for s in ordered:
        xtwx = xtwx + s.xtwx
        xtwy = xtwy + s.xtwy
    return AggregateState(
        xtwx=xtwx, xtwy=xtwy,
        site_ids=tuple(s.site_id for s in ordered),
        site_ns=tuple(s.n for s in ordered),
        total_n=int(sum(s.n for s in ordered)),
        sum_weights=float(sum(s.sum_weights for s in ordered)),
        columns=first.columns, blip_order=first.blip_order,
        treatment_kind=first.treatment_kind, weight_scheme=first.weight_scheme,
        fingerprint=first.fingerprint,
    )


def solve_distributed(agg: AggregateState) -> BlipEstimate:
    """Solve the accumulated normal equations and extract the blip subvector.

    Standard errors are NaN here: the wire format carries no y'Wy, so the
    residual variance cannot be reconstructed from summaries alone.
    """
    try:
        theta, cond = glm.solve_normal_equations(agg.xtwx, agg.xtwy)
    except SingularDesign as err:
        per_site = ", ".join(f"{i}:{n}" for i, n in zip(agg.site_ids, agg.site_ns))
        raise SingularDesign(
            f"aggregated normal equations singular (per-site n: {per_site}): {err}",
            condition_estimate=err.condition_estimate,
        ) from err
    columns = agg.columns
    psi_names = tuple(
        c for c in columns
        if c == "a" or c == "a^2" or c.startswith("a*") or c.startswith("a^2*")
    )
    idx = [columns.index(c) for c in psi_names]
    psi = np.asarray([theta[i] for i in idx])
    blip_basis = tuple(c[len("a*"):] for c in psi_names if c.startswith("a*"))
    return BlipEstimate(
        theta=theta, columns=columns, psi=psi, psi_names=psi_names,
        psi_standard_errors=np.full(len(idx), np.nan),
        method_tag=METHOD_DISTRIBUTED, blip_order=agg.blip_order,
        blip_basis=blip_basis,
        diagnostics={
            "condition_estimate": cond,
            "n": agg.total_n,
            "site_ids": list(agg.site_ids),
            "site_ns": list(agg.site_ns),
            "sum_weights": agg.sum_weights,
            "weight_scheme": agg.weight_scheme,
        },
    )


def summary_to_dict(s: SiteSummary) -> dict:
    return {
        "site_id": s.site_id,
        "n": s.n,
        "p": s.p,
        "columns": list(s.columns),
        "blip_order": s.blip_order,
        "treatment_kind": s.treatment_kind,
        "weight_scheme": s.weight_scheme,
        "sum_weights": s.sum_weights,
        "xtwx": [[float(v) for v in row] for row in s.xtwx],
        "xtwy": [float(v) for v in s.xtwy],
        "fingerprint": s.fingerprint,
    }


def serialize_summary(s: SiteSummary) -> bytes:
    return json.dumps(summary_to_dict(s), indent=1).encode("utf-8")


_REQUIRED_KEYS = ("site_id", "n", "p", "columns", "blip_order", "treatment_kind",
                  "weight_scheme", "sum_weights", "xtwx", "xtwy")


def summary_from_dict(obj: dict) -> SiteSummary:
    if not isinstance(obj, dict):
        raise MalformedSummary("summary payload must be a JSON object")
    if "fingerprint" not in obj or not obj.get("fingerprint"):
        raise FingerprintMissing("summary carries no design fingerprint")
    missing = [k for k in _REQUIRED_KEYS if k not in obj]
    if missing:
        raise MalformedSummary(f"summary misses fields: {missing}")
    try:
        p = int(obj["p"])
        columns = tuple(str(c) for c in obj["columns"])
        xtwx_rows = obj["xtwx"]
        if len(columns) != p:
            raise MalformedSummary(f"{p} columns declared, {len(columns)} names given")
        if len(xtwx_rows) != p or any(len(row) != p for row in xtwx_rows):
            raise MalformedSummary(f"xtwx must be exactly {p} rows of {p} numbers")
        xtwx = np.asarray(xtwx_rows, dtype=float)
        xtwy = np.asarray(obj["xtwy"], dtype=float)
        if xtwy.shape != (p,):
            raise MalformedSummary(f"xtwy must have length {p}")
        if not (np.all(np.isfinite(xtwx)) and np.all(np.isfinite(xtwy))):
            raise MalformedSummary("summary matrices contain non-finite values")
        summary = SiteSummary(
            site_id=str(obj["site_id"]), n=int(obj["n"]), columns=columns,
            blip_order=str(obj["blip_order"]), treatment_kind=str(obj["treatment_kind"]),
            weight_scheme=str(obj["weight_scheme"]), sum_weights=float(obj["sum_weights"]),
            xtwx=xtwx, xtwy=xtwy, fingerprint=str(obj["fingerprint"]),
        )
    except MalformedSummary:
        raise
    except (TypeError, ValueError, KeyError) as err:
        raise MalformedSummary(f"summary failed validation: {err}") from err
    expected = design_fingerprint(summary.columns, summary.blip_order,
                                  summary.treatment_kind, summary.weight_scheme)
    if summary.fingerprint != expected:
        raise MalformedSummary(
            f"recorded fingerprint {summary.fingerprint} does not match the "
            f"design fields (expected {expected})"
        )
    return summary


def deserialize_summary(payload: bytes) -> SiteSummary:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise MalformedSummary(f"summary is not valid JSON: {err}") from err
    return summary_from_dict(obj)


def write_summary(s: SiteSummary, path: str | Path) -> None:
    Path(path).write_bytes(serialize_summary(s))


def read_summary(path: str | Path) -> SiteSummary:
    return deserialize_summary(Path(path).read_bytes())
