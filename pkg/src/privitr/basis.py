"""Named basis functions of the covariate columns.

A basis expression is a small string language over covariate columns:

* ``"x"``            -- the column itself
* ``"log(x)"``       -- natural log of a column (also sin, cos, exp, sqrt, abs)
* ``"x^2"``          -- integer power of a column

Expressions are the canonical column names used in design matrices, design
fingerprints, and serialized configs, so they must evaluate identically at
every site.
"""
from __future__ import annotations

import re
from typing import Mapping

import numpy as np

from .errors import UnknownBasisFunction

_UNARY = {
    "log": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_CALL_RE = re.compile(r"^([a-z]+)\(([A-Za-z_][A-Za-z0-9_]*)\)$")
_POW_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\^([0-9]+)$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _column(covariates: Mapping[str, np.ndarray], name: str, expr: str) -> np.ndarray:
    try:
        return np.asarray(covariates[name], dtype=float)
    except KeyError:
        raise UnknownBasisFunction(
            f"basis expression {expr!r} references unknown covariate {name!r}; "
            f"available: {sorted(covariates)}"
        ) from None


def evaluate_basis(expr: str, covariates: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate one basis expression over the covariate columns."""
    expr = expr.strip()
    if _NAME_RE.match(expr):
        return _column(covariates, expr, expr)
    m = _CALL_RE.match(expr)
    if m:
        fn_name, col = m.groups()
        if fn_name not in _UNARY:
            raise UnknownBasisFunction(
                f"unknown transform {fn_name!r} in {expr!r}; "
                f"supported: {sorted(_UNARY)}"
            )
        return _UNARY[fn_name](_column(covariates, col, expr))
    m = _POW_RE.match(expr)
    if m:
        col, power = m.groups()
        return _column(covariates, col, expr) ** int(power)
    raise UnknownBasisFunction(
        f"cannot parse basis expression {expr!r}; expected a column name, "
        "'fn(column)' or 'column^k'"
    )


def evaluate_many(
    exprs: tuple[str, ...] | list[str], covariates: Mapping[str, np.ndarray]
) -> list[np.ndarray]:
    return [evaluate_basis(e, covariates) for e in exprs]


def validate_unique(names: tuple[str, ...] | list[str], what: str) -> None:
    seen = set()
    for n in names:
        if n in seen:
            raise ValueError(f"duplicate {what} name: {n!r}")
        seen.add(n)
