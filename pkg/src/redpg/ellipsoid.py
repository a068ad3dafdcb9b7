"""Ellipsoid algebra: membership, translation, concentric Minkowski sums and
the pairwise separation margin used by the collision penalty."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, NumericalError

REGULARIZATION = 1e-9


@dataclass(frozen=True)
class Ellipsoid:
    """Set ``{x : (x - c)^T Q^-1 (x - c) <= 1}``."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        Q = np.asarray(self.shape, dtype=float)
        if Q.shape != (c.size, c.size):
            raise InputError(f"shape {Q.shape} does not match center of length {c.size}")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(Q), initial=0.0)):
            raise InputError("shape matrix is not symmetric")
        if c.size and np.linalg.eigvalsh(Q)[0] <= 0:
            raise InputError("shape matrix is not positive definite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", Q)

    @property
    def dim(self) -> int:
        return self.center.size

    def quadratic_form(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ np.linalg.solve(self.shape, d))


def _check_vector(E: Ellipsoid, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != E.dim:
        raise InputError(f"point of dimension {x.size} tested against {E.dim}-D ellipsoid")
    return x


def contains(E: Ellipsoid, x) -> bool:
    return E.quadratic_form(_check_vector(E, x)) <= 1.0 + 1e-12


def translate(E: Ellipsoid, c) -> Ellipsoid:
    return Ellipsoid(_check_vector(E, c), E.shape)


def is_spd(Q: np.ndarray) -> bool:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        return False
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-10 * max(1.0, np.abs(Q).max(initial=0.0))):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] > 0)


def boxplus(shapes: Sequence[np.ndarray]) -> np.ndarray:
    """Outer ellipsoidal approximation of a sum of concentric ellipsoids.

    Returns ``(sum_i sqrt(tr Q_i)) * (sum_i Q_i / sqrt(tr Q_i))``.
    """
    shapes = [np.asarray(Q, dtype=float) for Q in shapes]
    if not shapes:
        raise InputError("boxplus needs at least one shape")
    n = shapes[0].shape
    for Q in shapes:
        if Q.shape != n or not is_spd(Q):
            raise InputError("boxplus arguments must be SPD matrices of equal size")
    roots = [np.sqrt(np.trace(Q)) for Q in shapes]
    S = sum(roots) * sum(Q / r for Q, r in zip(shapes, roots))
    return 0.5 * (S + S.T)


def _margin(diff, S):
    S = S + REGULARIZATION * np.eye(S.shape[0])
    try:
        y = np.linalg.solve(S, diff)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("combined shape is singular") from exc
    val = float(diff @ y) - 1.0
    if not np.isfinite(val):
        raise NumericalError("non-finite separation margin")
    return val


def separation_margin(p_i, p_j, Q_i_pos, Q_j_pos) -> float:
    """``(p_i - p_j)^T (Q_i boxplus Q_j)^-1 (p_i - p_j) - 1``; positive means the
    two position ellipsoids are disjoint under the boxplus approximation."""
    p_i, p_j = np.asarray(p_i, dtype=float), np.asarray(p_j, dtype=float)
    if p_i.shape != p_j.shape or np.shape(Q_i_pos) != (p_i.size, p_i.size) \
            or np.shape(Q_j_pos) != (p_i.size, p_i.size):
        raise InputError("separation_margin dimension mismatch")
    return _margin(p_i - p_j, boxplus([Q_i_pos, Q_j_pos]))


def intersects(E1: Ellipsoid, E2: Ellipsoid, exact: bool = False) -> bool:
    """Overlap test.

    The default fast path checks whether ``c2 - c1`` lies in the boxplus
    ellipsoid of the two shapes, a conservative test that can report overlap
    for disjoint sets. ``exact=True`` decides membership of ``c2 - c1`` in the
    true Minkowski sum of the origin-centred copies.
    """
    if E1.dim != E2.dim:
        raise InputError("ellipsoids of different dimension")
    if not exact:
        return _margin(E2.center - E1.center, boxplus([E1.shape, E2.shape])) <= 0.0
    return exact_margin(E2.center - E1.center, E1.shape, E2.shape) <= 0.0


def exact_margin(diff, A, B, grid: int = 64) -> float:
    """``max_l d^T (A/(1-l) + B/l)^-1 d - 1`` over ``l`` in (0, 1).

    The Minkowski sum of two centred ellipsoids is the intersection of the
    ellipsoids ``A/(1-l) + B/l``, so the result is <= 0 exactly when ``diff``
    lies in the sum. The objective is unimodal in ``l``; a coarse grid
    brackets the maximum and golden-section search refines it.
    """
    diff = np.asarray(diff, dtype=float)

    def q(lam):
        return float(diff @ np.linalg.solve(A / (1.0 - lam) + B / lam, diff))

    ls = np.linspace(0.0, 1.0, grid + 2)[1:-1]
    vals = [q(v) for v in ls]
    k = int(np.argmax(vals))
    a = ls[k - 1] if k > 0 else 1e-12
    b = ls[k + 1] if k + 1 < len(ls) else 1.0 - 1e-12
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - phi * (b - a), a + phi * (b - a)
    qc, qd = q(c), q(d)
    for _ in range(80):
        if qc > qd:
            b, d, qd = d, c, qc
            c = b - phi * (b - a)
            qc = q(c)
        else:
            a, c, qc = c, d, qd
            d = a + phi * (b - a)
            qd = q(d)
    return max(qc, qd, vals[k]) - 1.0
