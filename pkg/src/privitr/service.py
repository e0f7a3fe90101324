"""Coordinator HTTP service for the distributed-regression protocol.

Sites POST their matrix summaries; the coordinator validates fingerprints,
aggregates, and solves on request. Summaries are held in process memory
(restart clears them), mirroring the single-round nature of the protocol.
Individual-level endpoints deliberately do not exist: rows never reach the
coordinator.
"""
from __future__ import annotations

import math
import threading

from fastapi import FastAPI, HTTPException

from . import __version__
from .distributed import (
    SiteSummary,
    aggregate_summaries,
    solve_distributed,
    summary_from_dict,
)
from .errors import (
    DuplicateSite,
    FingerprintMismatch,
    FingerprintMissing,
    MalformedSummary,
    SingularDesign,
)
from .gdwols import DoseRange, estimate_from_dict, optimal_dose
from .schemas import (
    DoseRequest,
    DoseResponse,
    EstimateRequest,
    EstimateResponse,
    HealthResponse,
    SummaryAccepted,
    SummaryInfo,
    SummaryPayload,
)

app = FastAPI(
    title="privitr coordinator",
    version=__version__,
    description="Aggregates per-site regression summaries and solves for the "
                "blip coefficients without ever seeing individual rows.",
)

_store: dict[str, SiteSummary] = {}
_lock = threading.Lock()


def _clean(value):
    """NaN/inf are not valid JSON numbers; encode them as None."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


@app.get("/healthz", response_model=HealthResponse)
def healthz() -> HealthResponse:
    with _lock:
        return HealthResponse(status="ok", n_sites_held=len(_store))


@app.get("/summaries", response_model=list[SummaryInfo])
def list_summaries() -> list[SummaryInfo]:
    with _lock:
        return [
            SummaryInfo(site_id=s.site_id, n=s.n, p=s.p, fingerprint=s.fingerprint)
            for s in sorted(_store.values(), key=lambda s: s.site_id)
        ]


@app.post("/summaries", response_model=SummaryAccepted, status_code=201)
def submit_summary(payload: SummaryPayload) -> SummaryAccepted:
    try:
        summary = summary_from_dict(payload.model_dump())
    except (MalformedSummary, FingerprintMissing, ValueError) as err:
        raise HTTPException(status_code=422, detail=str(err)) from err
    with _lock:
        if summary.site_id in _store:
            raise HTTPException(
                status_code=409,
                detail=f"site {summary.site_id!r} already submitted a summary",
            )
        _store[summary.site_id] = summary
        held = len(_store)
    return SummaryAccepted(site_id=summary.site_id, fingerprint=summary.fingerprint,
                           n_sites_held=held)


@app.delete("/summaries", status_code=204)
def reset_summaries() -> None:
    with _lock:
        _store.clear()


def _estimate_response(summaries: list[SiteSummary]) -> EstimateResponse:
    try:
        estimate = solve_distributed(aggregate_summaries(summaries))
    except (FingerprintMismatch, DuplicateSite) as err:
        raise HTTPException(status_code=409, detail=str(err)) from err
    except SingularDesign as err:
        raise HTTPException(status_code=422, detail=str(err)) from err
    return EstimateResponse(
        method=estimate.method_tag,
        columns=list(estimate.columns),
        theta=[float(v) for v in estimate.theta],
        psi_names=list(estimate.psi_names),
        psi=[float(v) for v in estimate.psi],
        psi_standard_errors=[
            float(v) if math.isfinite(float(v)) else None
            for v in estimate.psi_standard_errors
        ],
        blip_order=estimate.blip_order,
        blip_basis=list(estimate.blip_basis),
        diagnostics=_clean(estimate.diagnostics),
    )


@app.post("/estimate", response_model=EstimateResponse, response_model_exclude_none=False)
def estimate(request: EstimateRequest) -> EstimateResponse:
    with _lock:
        summaries = list(_store.values())
    if request.fingerprint is not None:
        summaries = [s for s in summaries if s.fingerprint == request.fingerprint]
    if not summaries:
        raise HTTPException(status_code=404, detail="no matching site summaries held")
    return _estimate_response(summaries)


@app.post("/dose", response_model=DoseResponse)
def dose(request: DoseRequest) -> DoseResponse:
    est = estimate_from_dict(request.estimate.model_dump())
    try:
        dose_range = DoseRange(request.a_min, request.a_max)
        decision = optimal_dose(est, request.covariates, dose_range)
    except ValueError as err:
        raise HTTPException(status_code=422, detail=str(err)) from err
    return DoseResponse(dose=decision.dose, at_boundary=decision.at_boundary,
                        degenerate_flat=decision.degenerate_flat)
