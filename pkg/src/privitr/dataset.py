"""Individual-level datasets: one row per subject, with site labels.

CSV layout is ``site,<covariates...>,a,y[,p_true]``. Floats are written with
`repr` so file round trips are value-exact; a leading ``# ...`` line may carry
the configuration that produced the file and is skipped on read.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

RESERVED_COLUMNS = {"site", "a", "y", "p_true"}


@dataclass(frozen=True)
class Dataset:
    site: np.ndarray
    covariates: dict[str, np.ndarray]
    treatment: np.ndarray
    outcome: np.ndarray
    propensity: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.outcome)
        if len(self.site) != n or len(self.treatment) != n:
            raise ValueError("site, treatment and outcome must have equal length")
        for name, col in self.covariates.items():
            if name in RESERVED_COLUMNS:
                raise ValueError(f"covariate name {name!r} is reserved")
            if len(col) != n:
                raise ValueError(f"covariate {name!r} has length {len(col)}, expected {n}")
        if self.propensity is not None and len(self.propensity) != n:
            raise ValueError("propensity must match the number of rows")

    @property
    def n(self) -> int:
        return len(self.outcome)

    def site_labels(self) -> list[str]:
        """Distinct site labels in sorted order."""
        return sorted(set(str(s) for s in self.site))

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            site=self.site[indices],
            covariates={k: v[indices] for k, v in self.covariates.items()},
            treatment=self.treatment[indices],
            outcome=self.outcome[indices],
            propensity=None if self.propensity is None else self.propensity[indices],
        )

    def split_by_site(self) -> dict[str, "Dataset"]:
        labels = np.asarray([str(s) for s in self.site])
        return {
            lab: self.subset(np.flatnonzero(labels == lab))
            for lab in self.site_labels()
        }


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(data: Dataset, path: str | Path, config: Mapping | None = None) -> None:
    path = Path(path)
    cov_names = list(data.covariates)
    header = ["site"] + cov_names + ["a", "y"]
    if data.propensity is not None:
        header.append("p_true")
    with path.open("w", newline="") as fh:
        if config is not None:
            fh.write("# " + json.dumps(config, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [str(data.site[i])]
            row += [_fmt(data.covariates[c][i]) for c in cov_names]
            row += [_fmt(data.treatment[i]), _fmt(data.outcome[i])]
            if data.propensity is not None:
                row.append(_fmt(data.propensity[i]))
            writer.writerow(row)


def read_csv(path: str | Path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = rows[0]
    if "site" not in header or "a" not in header or "y" not in header:
        raise ValueError(f"{path}: CSV must have 'site', 'a' and 'y' columns")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: CSV has a header but no rows")
    cols = {name: [] for name in header}
    for r in body:
        if len(r) != len(header):
            raise ValueError(f"{path}: row with {len(r)} fields, expected {len(header)}")
        for name, v in zip(header, r):
            cols[name].append(v)
    site = np.asarray(cols.pop("site"), dtype=object)
    treatment = np.asarray(cols.pop("a"), dtype=float)
    outcome = np.asarray(cols.pop("y"), dtype=float)
    propensity = None
    if "p_true" in cols:
        propensity = np.asarray(cols.pop("p_true"), dtype=float)
    covariates = {name: np.asarray(v, dtype=float) for name, v in cols.items()}
    return Dataset(site, covariates, treatment, outcome, propensity)
