"""Lattice (min-max) representations of continuous piecewise-linear functions.

A :class:`LatticePWL` holds a list of affine planes ``f_j(z) = g_j . z + c_j``
and a family of index subsets ``S``.  Its value is

    min over s in S of (max over j in s of f_j(z))

and the *dual* reading swaps the two operations.  ``compile_to_fullsort``
turns any lattice whose plane gradients have L1 norm at most 1 into an exact
three-layer FullSort network whose weight matrices all have infinity-norm 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .activations import ActivationSpec
from .errors import (
    CapacityError,
    InfeasibleSeparation,
    InvalidArgument,
    NotInClassG,
    OutOfDomain,
    ParseError,
    VersionError,
)
from .linalg import as_vector
from .network import Layer, SortNetwork

G_TOL = 1e-12
DUAL_GUARD = 10**6


@dataclass(frozen=True, eq=False)
class Hyperplane:
    gradient: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "gradient", as_vector(self.gradient, "gradient"))
        object.__setattr__(self, "offset", float(self.offset))
        if not math.isfinite(self.offset):
            raise InvalidArgument("plane offset must be finite")

    def __call__(self, z):
        return np.asarray(z, dtype=np.float64) @ self.gradient + self.offset

    def in_class_g(self, tol: float = G_TOL) -> bool:
        return float(np.abs(self.gradient).sum()) <= 1.0 + tol


@dataclass(frozen=True, eq=False)
class LatticePWL:
    planes: tuple[Hyperplane, ...]
    subsets: tuple[tuple[int, ...], ...]
    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, planes, subsets, lo, hi):
        planes = tuple(
            p if isinstance(p, Hyperplane) else Hyperplane(p[0], p[1]) for p in planes
        )
        lo = as_vector(lo, "lo")
        hi = as_vector(hi, "hi")
        if not planes:
            raise InvalidArgument("a lattice needs at least one plane")
        dim = planes[0].gradient.shape[0]
        if any(p.gradient.shape[0] != dim for p in planes):
            raise InvalidArgument("all planes must share one input dimension")
        if lo.shape != (dim,) or hi.shape != (dim,):
            raise InvalidArgument(f"domain box must have {dim} coordinates")
        if not np.all(lo < hi):
            raise InvalidArgument("domain box needs lo < hi in every coordinate")
        subs = []
        for s in subsets:
            # dedupe while keeping first-seen order
            s = tuple(dict.fromkeys(int(j) for j in s))
            if not s:
                raise InvalidArgument("empty subset")
            if any(j < 0 or j >= len(planes) for j in s):
                raise InvalidArgument(f"subset {s} references a missing plane")
            subs.append(s)
        if not subs:
            raise InvalidArgument("a lattice needs at least one subset")
        used = {j for s in subs for j in s}
        if len(used) != len(planes):
            missing = sorted(set(range(len(planes))) - used)
            raise InvalidArgument(f"planes {missing} are not referenced by any subset")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "subsets", tuple(subs))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def gradients(self) -> np.ndarray:
        return np.stack([p.gradient for p in self.planes])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([p.offset for p in self.planes])

    def plane_values(self, z) -> np.ndarray:
        """Values of every plane at ``z``: shape ``(..., n_planes)``."""
        z = self._check(z)
        return z @ self.gradients.T + self.offsets

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1:] != (self.dim,):
            raise InvalidArgument(f"point of shape {z.shape} for a {self.dim}-D lattice")
        if np.any(z < self.lo) or np.any(z > self.hi):
            raise OutOfDomain("point outside the lattice domain box")
        return z

    def __call__(self, z):
        return eval_lattice(self, z)


def eval_lattice(L: LatticePWL, z):
    """min over subsets of the max over that subset's planes."""
    vals = L.plane_values(z)
    out = np.min(np.stack([vals[..., list(s)].max(axis=-1) for s in L.subsets]), axis=0)
    return float(out) if np.ndim(out) == 0 else out


def eval_dual(L: LatticePWL, z):
    """max over subsets of the min over that subset's planes."""
    vals = L.plane_values(z)
    out = np.max(np.stack([vals[..., list(s)].min(axis=-1) for s in L.subsets]), axis=0)
    return float(out) if np.ndim(out) == 0 else out


def dual_convert(L: LatticePWL, guard: int = DUAL_GUARD) -> LatticePWL:
    """Subsets ``S'`` whose max-min reading equals the min-max reading of ``L``.

    ``S'`` is the set of transversals of ``S`` (one plane picked from every
    subset), deduplicated as sets.  Distributivity makes the two readings agree.
    """
    total = math.prod(len(s) for s in L.subsets)
    if total > guard:
        raise CapacityError(f"{total} transversals exceed the enumeration guard of {guard}")
    seen = {}
    for pick in itertools.product(*L.subsets):
        key = tuple(sorted(set(pick)))
        seen.setdefault(key, None)
    return LatticePWL(L.planes, list(seen), L.lo, L.hi)


def make_separating_pair(x, y, a: float, b: float) -> tuple[Hyperplane, Hyperplane]:
    """Two planes whose pointwise max passes through ``(x, a)`` and ``(y, b)``.

    With ``C = (x - y) / ||x - y||_inf`` the planes are
    ``f0(z) = C.z + a - C.x`` and ``f1(z) = -C.z + b + C.y``.
    """
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise InvalidArgument("x and y must have the same dimension")
    d = x - y
    dist = float(np.abs(d).max()) if d.size else 0.0
    if dist == 0.0:
        raise InvalidArgument("x and y must be distinct")
    if abs(a - b) > dist:
        raise InfeasibleSeparation(f"|a - b| = {abs(a - b)} exceeds ||x - y||_inf = {dist}")
    C = d / dist
    f0 = Hyperplane(C, a - C @ x)
    f1 = Hyperplane(-C, b + C @ y)
    return f0, f1


def separating_lattice(x, y, a, b, lo, hi) -> LatticePWL:
    f0, f1 = make_separating_pair(x, y, a, b)
    return LatticePWL([f0, f1], [(0, 1)], lo, hi)


def compute_alpha(L: LatticePWL) -> float:
    """A strict upper bound on ``|f_j(z)|`` over the domain box, for every plane."""
    reach = np.maximum(np.abs(L.lo), np.abs(L.hi))
    sup = np.abs(L.offsets) + np.abs(L.gradients) @ reach
    return float(sup.max()) + 1.0


def compile_to_fullsort(L: LatticePWL, tol: float = G_TOL) -> SortNetwork:
    """Exact three-layer FullSort network computing ``eval_lattice(L, .)``.

    Layer 0 stacks the planes of every subset and shifts block ``i`` by
    ``2*i*alpha`` so the blocks stay ordered after the first FullSort.
    Layer 1 picks the last (largest) entry of each block and removes the
    shift.  After the second FullSort, layer 2 reads the first (smallest)
    entry, giving the min over subsets of the per-subset max.
    """
    for j, plane in enumerate(L.planes):
        if not plane.in_class_g(tol):
            raise NotInClassG(
                f"plane {j} has gradient L1 norm {np.abs(plane.gradient).sum():.17g} > 1"
            )
    alpha = compute_alpha(L)
    G, c = L.gradients, L.offsets
    rows, biases, ends = [], [], []
    for i, s in enumerate(L.subsets, start=1):
        for j in s:
            rows.append(G[j])
            biases.append(c[j] + 2 * i * alpha)
        ends.append(len(rows) - 1)
    W0 = np.array(rows)
    B0 = np.array(biases)
    k = len(L.subsets)
    W1 = np.zeros((k, len(rows)))
    W1[np.arange(k), ends] = 1.0
    B1 = -2.0 * alpha * np.arange(1, k + 1)
    W2 = np.zeros((1, k))
    W2[0, 0] = 1.0
    return SortNetwork(
        [
            Layer(W0, B0, ActivationSpec.fullsort()),
            Layer(W1, B1, ActivationSpec.fullsort()),
            Layer(W2, np.zeros(1), ActivationSpec.none()),
        ],
        train_norm="inf",
    )


def block_ends(L: LatticePWL) -> np.ndarray:
    """Positions (0-based) of each subset's last row in the compiled first layer."""
    return np.cumsum([len(s) for s in L.subsets]) - 1


def half_gable() -> LatticePWL:
    """The half-gable surface on ``[-1, 1]^2``.

    Planes ``y + 1``, ``1 - x`` and ``1 + x`` (the rows of the two-layer
    attempt).  The subset family ``{{0, 1}, {0, 2}}`` gives
    ``max(y + 1, 1 - |x|)``: a gable ridge along ``x = 0`` for low ``y`` that is
    overtaken by the rising plane ``y + 1``.  The subset choice is ours.
    """
    planes = [
        Hyperplane([0.0, 1.0], 1.0),
        Hyperplane([-1.0, 0.0], 1.0),
        Hyperplane([1.0, 0.0], 1.0),
    ]
    return LatticePWL(planes, [(0, 1), (0, 2)], [-1.0, -1.0], [1.0, 1.0])


def absolute_value(lo: float = -1.0, hi: float = 1.0) -> LatticePWL:
    return LatticePWL(
        [Hyperplane([1.0], 0.0), Hyperplane([-1.0], 0.0)], [(0, 1)], [lo], [hi]
    )


def random_lattice(
    rng: np.random.Generator,
    max_dim: int = 3,
    max_planes: int = 6,
    max_subsets: int = 4,
    denominator: int = 64,
) -> LatticePWL:
    """Random lattice on ``[-1, 1]^d`` with gradients of L1 norm exactly 1.

    Gradient entries are signed multiples of ``1/denominator`` whose
    magnitudes sum to ``denominator``, so the unit L1 norm is exact in binary
    floating point when ``denominator`` is a power of two.
    """
    dim = int(rng.integers(1, max_dim + 1))
    n_planes = int(rng.integers(1, max_planes + 1))
    planes = []
    for _ in range(n_planes):
        cuts = np.sort(rng.integers(0, denominator + 1, size=dim - 1))
        parts = np.diff(np.concatenate([[0], cuts, [denominator]]))
        signs = rng.choice([-1.0, 1.0], size=dim)
        planes.append(Hyperplane(signs * parts / denominator, rng.uniform(-1, 1)))
    n_sub = int(rng.integers(1, max_subsets + 1))
    subsets = [
        list(rng.choice(n_planes, size=int(rng.integers(1, n_planes + 1)), replace=False))
        for _ in range(n_sub)
    ]
    # every plane must appear somewhere
    for j in set(range(n_planes)) - {j for s in subsets for j in s}:
        subsets[int(rng.integers(n_sub))].append(j)
    return LatticePWL(planes, subsets, -np.ones(dim), np.ones(dim))


# -- lattice file -------------------------------------------------------------
#
#   LATTICE/1
#   dim 2
#   lo -1 -1
#   hi 1 1
#   plane <g_1> ... <g_dim> <offset>
#   subset <j> <j> ...
#
# Blank lines and text after '#' are ignored.

LATTICE_MAGIC = "LATTICE"
LATTICE_VERSION = 1


def lattice_dumps(L: LatticePWL) -> str:
    fmt = lambda v: repr(float(v))  # noqa: E731  repr round-trips float64 exactly
    lines = [
        f"{LATTICE_MAGIC}/{LATTICE_VERSION}",
        f"dim {L.dim}",
        "lo " + " ".join(map(fmt, L.lo)),
        "hi " + " ".join(map(fmt, L.hi)),
    ]
    for p in L.planes:
        lines.append("plane " + " ".join(map(fmt, [*p.gradient, p.offset])))
    for s in L.subsets:
        lines.append("subset " + " ".join(map(str, s)))
    return "\n".join(lines) + "\n"


def lattice_loads(text: str) -> LatticePWL:
    dim = None
    lo = hi = None
    planes, subsets = [], []
    seen_magic = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not seen_magic:
            magic, _, version = line.partition("/")
            if magic != LATTICE_MAGIC:
                raise ParseError(f"bad magic {line!r}", line=lineno)
            if version != str(LATTICE_VERSION):
                raise VersionError(f"unsupported lattice version {version!r}", line=lineno)
            seen_magic = True
            continue
        key, *vals = line.split()
        try:
            if key == "dim":
                dim = int(vals[0])
            elif key in ("lo", "hi", "plane"):
                if dim is None:
                    raise ParseError(f"{key} line before dim", line=lineno)
                nums = [float(v) for v in vals]
                want = dim + 1 if key == "plane" else dim
                if len(nums) != want:
                    raise ParseError(f"{key} needs {want} numbers", line=lineno)
                if key == "lo":
                    lo = nums
                elif key == "hi":
                    hi = nums
                else:
                    planes.append(Hyperplane(nums[:-1], nums[-1]))
            elif key == "subset":
                subsets.append([int(v) for v in vals])
            else:
                raise ParseError(f"unknown directive {key!r}", line=lineno)
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad {key} line: {exc}", line=lineno) from None
    if not seen_magic:
        raise ParseError("empty lattice file", line=1)
    if lo is None or hi is None:
        raise ParseError("lattice file needs lo and hi lines")
    try:
        return LatticePWL(planes, subsets, lo, hi)
    except InvalidArgument as exc:
        raise ParseError(f"invalid lattice: {exc}") from None


def save_lattice(L: LatticePWL, path) -> None:
    Path(path).write_text(lattice_dumps(L))


def load_lattice(path) -> LatticePWL:
    return lattice_loads(Path(path).read_text())
