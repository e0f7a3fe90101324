"""Pydantic request/response models for the coordinator service."""
from __future__ import annotations

from pydantic import BaseModel, Field


class SummaryPayload(BaseModel):
    """One site's contribution, exactly the summary-file wire format."""

    site_id: str
    n: int = Field(ge=1)
    p: int = Field(ge=1)
    columns: list[str]
    blip_order: str
    treatment_kind: str
    weight_scheme: str
    sum_weights: float
    xtwx: list[list[float]]
    xtwy: list[float]
    fingerprint: str


class SummaryAccepted(BaseModel):
    site_id: str
    fingerprint: str
    n_sites_held: int


class SummaryInfo(BaseModel):
    site_id: str
    n: int
    p: int
    fingerprint: str


class EstimateRequest(BaseModel):
    # When several designs are held, pick one; otherwise all summaries must share it.
    fingerprint: str | None = None


class EstimateResponse(BaseModel):
    method: str
    columns: list[str]
    theta: list[float]
    psi_names: list[str]
    psi: list[float]
    # None encodes an unavailable (NaN) standard error; summaries carry no
    # y'Wy, so distributed estimates cannot form a residual variance.
    psi_standard_errors: list[float | None]
    blip_order: str
    blip_basis: list[str]
    diagnostics: dict


class DoseRequest(BaseModel):
    estimate: EstimateResponse
    covariates: dict[str, float]
    a_min: float
    a_max: float


class DoseResponse(BaseModel):
    dose: float
    at_boundary: bool
    degenerate_flat: bool


class HealthResponse(BaseModel):
    status: str
    n_sites_held: int
