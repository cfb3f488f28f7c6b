from __future__ import annotations

import enum
import math

import numpy as np

# finite-k proxy for "converges to 0": last value below 10% of the first and below 1e-2
TREND_REL = 0.1
TREND_ABS = 1e-2
ZERO_TOL = 1e-12


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_MET = "hypothesis-not-met"


def trend_to_zero(values, rel: float = TREND_REL, abs_tol: float = TREND_ABS,
                  zero: float = ZERO_TOL) -> bool:
    """Decide whether a sequence of deviations (ordered by k) is vanishing.

    Columns that stay at or below ``zero`` count as converged; pass a larger
    ``zero`` when the column sits at a known numerical floor.
    """
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0 or not np.all(np.isfinite(v)):
        return False
    if np.all(v <= zero):
        return True
    return bool(v[-1] < abs_tol and v[-1] <= max(rel * v[0], zero))


def shrink_factor(values) -> float:
    v = np.abs(np.asarray(values, dtype=float))
    if v[-1] == 0:
        return np.inf
    return float(v[0] / v[-1])


def jsonable(x):
    """Recursively convert numpy scalars/arrays and enums to JSON-ready values;
    non-finite floats become their repr."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    return x
