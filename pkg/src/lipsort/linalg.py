"""Dense float64 helpers and the operator norms behind every Lipschitz bound.

Matrices and vectors are plain ``numpy.ndarray`` objects in C (row-major)
order.  The ``as_matrix``/``as_vector`` helpers normalise and validate them.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument

POWER_ITERS = 200
POWER_TOL = 1e-10


class ConvergenceWarning(RuntimeWarning):
    pass


def as_matrix(W, name="matrix") -> np.ndarray:
    W = np.ascontiguousarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return W


def as_vector(x, name="vector") -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgument(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return x


def op_norm_inf(W) -> float:
    """Operator norm induced by the L-infinity vector norm: the largest absolute row sum."""
    W = as_matrix(W)
    if W.size == 0:
        raise InvalidArgument("operator norm of an empty matrix")
    return float(np.abs(W).sum(axis=1).max())


def op_norm_1(W) -> float:
    """Largest absolute column sum (L1-induced norm)."""
    W = as_matrix(W)
    if W.size == 0:
        raise InvalidArgument("operator norm of an empty matrix")
    return float(np.abs(W).sum(axis=0).max())


class PowerIteration(NamedTuple):
    sigma: float
    u: np.ndarray  # left singular vector, unit L2
    v: np.ndarray  # right singular vector, unit L2
    converged: bool
    iterations: int


def power_iteration(W, iters: int = POWER_ITERS, tol: float = POWER_TOL) -> PowerIteration:
    """Top singular triple of ``W`` by power iteration on ``W.T @ W``.

    The start vector is the normalised all-ones vector.  If that happens to
    lie in the null space of ``W`` the standard basis vectors are tried in
    order, so the result stays deterministic.
    """
    W = as_matrix(W)
    if W.size == 0:
        raise InvalidArgument("operator norm of an empty matrix")
    if iters < 1:
        raise InvalidArgument("iters must be >= 1")
    if not tol > 0:
        raise InvalidArgument("tol must be > 0")
    m, n = W.shape
    if not np.any(W):
        return PowerIteration(0.0, np.zeros(m), np.zeros(n), True, 0)

    starts = [np.full(n, 1.0 / np.sqrt(n))] + [np.eye(n)[k] for k in range(n)]
    for v in starts:
        if np.linalg.norm(W @ v) > 0:
            break

    sigma = np.linalg.norm(W @ v)
    converged = False
    it = 0
    for it in range(1, iters + 1):
        w = W.T @ (W @ v)
        nw = np.linalg.norm(w)
        v = w / nw
        Wv = W @ v
        new_sigma = np.linalg.norm(Wv)
        if abs(new_sigma - sigma) < tol:
            sigma = new_sigma
            converged = True
            break
        sigma = new_sigma
    Wv = W @ v
    u = Wv / np.linalg.norm(Wv)
    return PowerIteration(float(sigma), u, v, converged, it)


def op_norm_2(W, iters: int = POWER_ITERS, tol: float = POWER_TOL) -> float:
    """Spectral norm estimate.

    Emits :class:`ConvergenceWarning` and returns the last estimate when the
    iteration budget runs out.
    """
    res = power_iteration(W, iters, tol)
    if not res.converged:
        warnings.warn(
            f"power iteration did not converge in {iters} iterations "
            f"(estimate {res.sigma!r})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return res.sigma


def op_norm(W, p) -> float:
    """Operator norm induced by the vector ``p`` norm, p in {1, 2, inf}."""
    if p in ("1", 1):
        return op_norm_1(W)
    p = norm_key(p)
    if p == "inf":
        return op_norm_inf(W)
    return op_norm_2(W)


def norm_key(p) -> str:
    """Normalise the many spellings of a norm selector to ``"inf"`` or ``"2"``."""
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "linf", "l_inf", "infinity", "∞"):
            return "inf"
        if key in ("2", "l2"):
            return "2"
    elif p == np.inf:
        return "inf"
    elif p == 2:
        return "2"
    raise InvalidArgument(f"unsupported norm {p!r}; expected 2 or inf")


def vec_norm(x, p) -> np.ndarray | float:
    """Vector norm along the last axis for p in {1, 2, inf}."""
    x = np.asarray(x, dtype=np.float64)
    if p in ("1", 1):
        return np.abs(x).sum(axis=-1)
    p = norm_key(p)
    if p == "inf":
        return np.abs(x).max(axis=-1)
    return np.sqrt((x * x).sum(axis=-1))


def dual_norm(x, p) -> np.ndarray | float:
    """Dual of the ``p`` vector norm: L1 for inf, L2 for 2."""
    p = norm_key(p)
    return vec_norm(x, 1 if p == "inf" else 2)


def matvec(W, x) -> np.ndarray:
    W = as_matrix(W)
    x = as_vector(x)
    if W.shape[1] != x.shape[0]:
        raise InvalidArgument(f"shape mismatch: {W.shape} @ {x.shape}")
    return W @ x


def affine(W, x, b) -> np.ndarray:
    b = as_vector(b, "bias")
    y = matvec(W, x)
    if y.shape != b.shape:
        raise InvalidArgument(f"bias shape {b.shape} does not match output {y.shape}")
    return y + b
