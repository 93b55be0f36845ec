"""Small dense linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import BranchTrackingFailure

CLUSTER_RTOL = 1e-8
SUBCLUSTER_RTOL = 1e-7
OVERLAP_MIN = 0.7


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def herm_defect(a: np.ndarray) -> float:
    scale = max(np.linalg.norm(a, 2), 1.0)
    return float(np.linalg.norm(a - a.conj().T, 2) / scale)


def group_sorted(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Split ascending ``values`` into runs whose consecutive gaps are <= tol."""
    values = np.asarray(values)
    if values.size == 0:
        return []
    groups = [[0]]
    for i in range(1, values.size):
        if values[i] - values[i - 1] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.array(g) for g in groups]


def psd_sqrt(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(a))
    p = -0.5 if inverse else 0.5
    return (v * w**p) @ v.conj().T


def match_by_overlap(prev: np.ndarray, new: np.ndarray,
                     threshold: float = OVERLAP_MIN) -> tuple[np.ndarray, np.ndarray]:
    """Assign columns of ``new`` to columns of ``prev`` by maximal |<prev, new>|.

    Returns the column order for ``new`` and the matched overlaps.
    """
    ov = np.abs(prev.conj().T @ new)
    rows, cols = linear_sum_assignment(-ov)
    order = np.empty(prev.shape[1], dtype=int)
    order[rows] = cols
    matched = ov[rows, cols]
    if matched.size and matched.min() < threshold:
        raise BranchTrackingFailure(
            f"eigenvector overlap {matched.min():.3f} below {threshold}")
    return order, matched[np.argsort(rows)]


def lstsq_poly(x: np.ndarray, y: np.ndarray, degree: int) -> tuple[np.ndarray, float]:
    """Least-squares polynomial fit in a rescaled variable; returns coefficients in x."""
    scale = float(np.max(np.abs(x)))
    u = x / scale
    V = np.vander(u, degree + 1, increasing=True)
    c, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = float(np.sqrt(np.mean((V @ c - y) ** 2)))
    return c / scale ** np.arange(degree + 1), resid
