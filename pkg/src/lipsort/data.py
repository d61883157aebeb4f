"""Datasets: the two-arm spiral generator, an MNIST IDX reader and CSV I/O."""

from __future__ import annotations

import csv
import gzip
import hashlib
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, InvalidArgument, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # (N, d) float64
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise InvalidArgument(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidArgument(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.num_classes)

    def split(self, n_first: int) -> tuple["LabeledDataset", "LabeledDataset"]:
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))


@dataclass(frozen=True)
class SpiralSpec:
    points_per_class: int = 500
    turns: float = 1.75
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.points_per_class < 1:
            raise InvalidArgument("points_per_class must be >= 1")
        if self.noise_std < 0:
            raise InvalidArgument("noise_std must be >= 0")


def spiral_point(t, k: int, turns: float) -> np.ndarray:
    """Noise-free point of arm ``k`` at parameter ``t`` in [0, 1]: radius ``t``."""
    t = np.asarray(t, dtype=np.float64)
    angle = 2 * np.pi * turns * t + k * np.pi
    return np.stack([t * np.cos(angle), t * np.sin(angle)], axis=-1)


def gen_spiral(spec: SpiralSpec = SpiralSpec()) -> LabeledDataset:
    """Two interleaved Archimedean spirals in [-1, 1]^2, labels 0 and 1.

    Noise-free points already lie in the unit disc, so no rescaling is applied.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.points_per_class
    xs, ys = [], []
    for k in (0, 1):
        t = rng.uniform(0.0, 1.0, size=n)
        pts = spiral_point(t, k, spec.turns)
        if spec.noise_std > 0:
            pts = pts + rng.normal(0.0, spec.noise_std, size=pts.shape)
        xs.append(pts)
        ys.append(np.full(n, k))
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys), 2)


def _read_idx(path, magic: int, ndim: int) -> tuple[np.ndarray, tuple[int, ...]]:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise ParseError(f"{path.name}: truncated magic number", offset=len(raw))
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path.name}: magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    if len(raw) < header:
        raise ParseError(f"{path.name}: truncated header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise ParseError(
            f"{path.name}: truncated payload, {len(raw)} of {need} bytes", offset=len(raw)
        )
    if len(raw) > need:
        raise ParseError(f"{path.name}: {len(raw) - need} trailing bytes", offset=need)
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    return data, dims


def load_mnist(images_path, labels_path, limit: int | None = None) -> LabeledDataset:
    """Read an IDX image/label pair.  Pixels become float64 ``v / 255``, flattened to 784."""
    images, idims = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels, ldims = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if idims[0] != ldims[0]:
        raise ConsistencyError(f"{idims[0]} images but {ldims[0]} labels")
    if labels.size and labels.max() > 9:
        raise ConsistencyError(f"label {labels.max()} outside 0..9")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(x, labels.astype(np.int64), 10)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, r, c = images.shape
    Path(path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, r, c) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def mnist_paths(directory) -> dict[str, Path]:
    """Locate the four standard files (plain or ``.gz``) in ``directory``."""
    directory = Path(directory)
    out = {}
    for key, name in MNIST_FILES.items():
        for candidate in (directory / name, directory / (name + ".gz")):
            if candidate.exists():
                out[key] = candidate
                break
        else:
            raise FileNotFoundError(directory / name)
    return out


def load_mnist_dir(directory, split: str = "train", limit: int | None = None) -> LabeledDataset:
    paths = mnist_paths(directory)
    return load_mnist(paths[f"{split}_images"], paths[f"{split}_labels"], limit=limit)


def fetch_mnist(mirror_url: str, dest, checksums: dict[str, str]) -> dict[str, Path]:
    """Download the four files from ``mirror_url`` and verify SHA-256 checksums.

    ``checksums`` maps file names (as found on the mirror) to hex digests;
    there is no built-in host.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    out = {}
    for name, digest in checksums.items():
        target = dest / name
        if not target.exists():
            with urllib.request.urlopen(mirror_url.rstrip("/") + "/" + name) as resp:
                payload = resp.read()
            got = hashlib.sha256(payload).hexdigest()
            if got != digest:
                raise ConsistencyError(f"{name}: sha256 {got} does not match {digest}")
            target.write_bytes(payload)
        out[name] = target
    return out


def save_csv(ds: LabeledDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.dim)] + ["label"])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise ParseError(f"{path}: expected a header ending in 'label'", line=1)
    xs, ys = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise ParseError(f"{path}: expected {len(rows[0])} columns", line=lineno)
        try:
            xs.append([float(v) for v in row[:-1]])
            ys.append(int(row[-1]))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from None
    labels = np.array(ys, dtype=np.int64)
    k = num_classes if num_classes is not None else int(labels.max()) + 1 if ys else 0
    return LabeledDataset(np.array(xs).reshape(len(xs), -1), labels, max(k, 2))
