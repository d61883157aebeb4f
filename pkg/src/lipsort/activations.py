"""GroupSort family activations (FullSort, OPLU) and the ReLU baseline.

All functions act on the last axis, so a batch of shape ``(N, width)`` is
handled the same way as a single vector.  Sorting is ascending and stable:
among equal entries the one with the lower original index comes first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

NONE = "none"
GROUP_SORT = "group_sort"
RELU = "relu"
KINDS = (NONE, GROUP_SORT, RELU)


@dataclass(frozen=True)
class ActivationSpec:
    """Per-layer activation.  ``group_size == 0`` means FullSort (one group per layer)."""

    kind: str = NONE
    group_size: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown activation kind {self.kind!r}")
        if self.group_size < 0:
            raise InvalidArgument("group_size must be >= 0")

    @classmethod
    def none(cls):
        return cls(NONE)

    @classmethod
    def fullsort(cls):
        return cls(GROUP_SORT, 0)

    @classmethod
    def groupsort(cls, g: int):
        return cls(GROUP_SORT, g)

    @classmethod
    def oplu(cls):
        return cls(GROUP_SORT, 2)

    @classmethod
    def relu(cls):
        return cls(RELU)

    def check_width(self, width: int) -> None:
        if self.kind == GROUP_SORT and self.group_size and width % self.group_size:
            raise InvalidArgument(
                f"layer width {width} is not divisible by group size {self.group_size}"
            )

    def __str__(self):
        if self.kind == GROUP_SORT:
            return "fullsort" if self.group_size == 0 else f"groupsort:{self.group_size}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "ActivationSpec":
        """Inverse of ``str``; also accepts ``gs10``, ``oplu`` and ``gs0``."""
        t = text.strip().lower()
        if t in ("none", "linear", ""):
            return cls.none()
        if t == "relu":
            return cls.relu()
        if t in ("fullsort", "full_sort"):
            return cls.fullsort()
        if t == "oplu":
            return cls.oplu()
        for prefix in ("groupsort:", "group_sort:", "gs"):
            if t.startswith(prefix):
                try:
                    return cls.groupsort(int(t[len(prefix):]))
                except ValueError:
                    break
        raise InvalidArgument(f"cannot parse activation {text!r}")


def _blocks(x: np.ndarray, g: int) -> tuple[np.ndarray, int]:
    width = x.shape[-1]
    g = width if g == 0 else g
    if g <= 0 or width % g:
        raise InvalidArgument(f"group size {g} does not divide width {width}")
    return x.reshape(x.shape[:-1] + (width // g, g)), g


def sort_permutation(x, g: int) -> np.ndarray:
    """Flat source indices ``perm`` with ``group_sort(x, g) == x[..., perm]``."""
    x = np.asarray(x, dtype=np.float64)
    xb, gs = _blocks(x, g)
    local = np.argsort(xb, axis=-1, kind="stable")
    offsets = (np.arange(xb.shape[-2]) * gs)[:, None]
    return (local + offsets).reshape(x.shape)


def group_sort(x, g: int) -> np.ndarray:
    """Sort each contiguous block of ``g`` entries ascending (``g == 0``: the whole width)."""
    x = np.asarray(x, dtype=np.float64)
    xb, _ = _blocks(x, g)
    return np.sort(xb, axis=-1, kind="stable").reshape(x.shape)


def group_sort_vjp(x, g: int, upstream) -> np.ndarray:
    """Route ``upstream`` back through the forward sorting permutation."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise InvalidArgument(f"shape mismatch: x {x.shape} vs upstream {upstream.shape}")
    perm = sort_permutation(x, g)
    return scatter_permuted(perm, upstream)


def scatter_permuted(perm: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Inverse routing for a precomputed permutation: ``out[..., perm[k]] = upstream[..., k]``."""
    out = np.empty_like(upstream)
    np.put_along_axis(out, perm, upstream, axis=-1)
    return out


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_vjp(x, upstream) -> np.ndarray:
    # subgradient 1 at 0 (pass-through)
    return np.where(np.asarray(x) >= 0.0, upstream, 0.0)


def apply(spec: ActivationSpec, x) -> np.ndarray:
    if spec.kind == GROUP_SORT:
        return group_sort(x, spec.group_size)
    if spec.kind == RELU:
        return relu(x)
    return np.asarray(x, dtype=np.float64)
