"""Input coercion/validation helpers for the estimator surface."""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolation
from .graph import Fact
from .intervals import PRESENT, Interval


def check_positive(value, name):
    if value is None or value <= 0:
        raise ContractViolation(f"{name} must be a positive integer, got {value!r}")


def _endpoint_from_float(x, allow_present=False):
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        if allow_present:
            return PRESENT
        raise ContractViolation("infinite start year")
    return int(x)


def as_fact_list(X) -> list[Fact]:
    """Coerce facts given as Fact objects or numeric rows (s, r, o, ts, te).

    In numeric rows NaN marks an unknown endpoint and +inf a ``present``
    end, matching the packed interval representation.
    """
    if isinstance(X, (list, tuple)) and (len(X) == 0 or isinstance(X[0], Fact)):
        return list(X)
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 5:
        raise ContractViolation(
            f"expected fact rows of shape (n, 5) [s, r, o, start, end], got {arr.shape}"
        )
    facts = []
    for s, r, o, ts, te in arr:
        facts.append(
            Fact(
                int(s),
                int(r),
                int(o),
                Interval(_endpoint_from_float(ts), _endpoint_from_float(te, True)),
            )
        )
    return facts


def as_query_rows(X):
    """Coerce queries to float rows (subject, relation, start, end)."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ContractViolation(
            f"expected query rows of shape (n, 4) [s, r, start, end], got {arr.shape}"
        )
    return [(int(s), int(r), ts, te) for s, r, ts, te in arr]
