"""Dense sort-activated networks.

A :class:`SortNetwork` is an ordered list of affine layers, each followed by
an activation.  Layer ``i`` maps ``h -> act_i(W_i @ h + b_i)``; the last
layer has no activation and produces the logits (or a scalar output).

The Lipschitz bound is the product of per-layer operator norms; GroupSort,
ReLU and the identity all have operator norm at most 1 in every p-norm, and
biases do not contribute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import activations as act
from .activations import ActivationSpec
from .errors import InvalidArgument, ParseError, VersionError
from .linalg import as_matrix, as_vector, norm_key, op_norm

MAGIC = "SORTNET"
FORMAT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: ActivationSpec = field(default_factory=ActivationSpec.none)

    def __post_init__(self):
        self.weight = as_matrix(self.weight, "weight")
        self.bias = as_vector(self.bias, "bias")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise InvalidArgument(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        self.activation.check_width(self.weight.shape[0])

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class SortNetwork:
    layers: list[Layer]
    train_norm: str | None = None  # informational; recorded in the model file

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgument("a network needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise InvalidArgument(
                    f"layer {i} expects {self.layers[i].in_dim} inputs, "
                    f"previous layer produces {self.layers[i - 1].out_dim}"
                )
        if self.layers[-1].activation.kind != act.NONE:
            raise InvalidArgument("the final layer must not have an activation")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def weights(self) -> list[np.ndarray]:
        return [layer.weight for layer in self.layers]

    def copy(self) -> "SortNetwork":
        return SortNetwork(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.train_norm,
        )

    def __eq__(self, other):
        if not isinstance(other, SortNetwork):
            return NotImplemented
        if len(self.layers) != len(other.layers):
            return False
        return self.train_norm == other.train_norm and all(
            a.activation == b.activation
            and a.weight.shape == b.weight.shape
            and a.weight.tobytes() == b.weight.tobytes()
            and a.bias.tobytes() == b.bias.tobytes()
            for a, b in zip(self.layers, other.layers)
        )

    def __call__(self, x):
        return forward(self, x)


def _check_input(net: SortNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise InvalidArgument(
            f"input of shape {x.shape} does not match input_dim {net.input_dim}"
        )
    return x


def forward(net: SortNetwork, x) -> np.ndarray:
    """Network output for one input ``(d,)`` or a batch ``(N, d)``."""
    h = _check_input(net, x)
    for layer in net.layers:
        h = act.apply(layer.activation, h @ layer.weight.T + layer.bias)
    return h


class _Trace(NamedTuple):
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer
    perms: list[np.ndarray | None]  # sort permutation (group_sort layers only)
    out: np.ndarray


def _forward_trace(net: SortNetwork, x: np.ndarray) -> _Trace:
    inputs, pre, perms = [], [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        spec = layer.activation
        if spec.kind == act.GROUP_SORT:
            perm = act.sort_permutation(z, spec.group_size)
            h = np.take_along_axis(z, perm, axis=-1)
        else:
            perm = None
            h = act.apply(spec, z)
        perms.append(perm)
    return _Trace(inputs, pre, perms, h)


class Gradients(NamedTuple):
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray


def backward(net: SortNetwork, x, upstream) -> Gradients:
    """Gradients of ``sum(upstream * forward(net, x))``.

    For a batch, parameter gradients are summed over samples (in sample
    order) and the input gradient keeps the batch axis.
    """
    x = _check_input(net, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = x.shape[:-1] + (net.output_dim,)
    if upstream.shape != expected:
        raise InvalidArgument(f"upstream shape {upstream.shape}, expected {expected}")
    trace = _forward_trace(net, x)
    return _backward_from_trace(net, trace, upstream)


def _backward_from_trace(net: SortNetwork, trace: _Trace, upstream: np.ndarray) -> Gradients:
    n = len(net.layers)
    gW: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    delta = upstream
    for i in reversed(range(n)):
        layer = net.layers[i]
        spec = layer.activation
        if spec.kind == act.GROUP_SORT:
            delta = act.scatter_permuted(trace.perms[i], delta)
        elif spec.kind == act.RELU:
            delta = act.relu_vjp(trace.pre[i], delta)
        h = trace.inputs[i]
        if delta.ndim == 1:
            gW[i] = np.outer(delta, h)
            gb[i] = delta.copy()
        else:
            gW[i] = delta.T @ h
            gb[i] = delta.sum(axis=0)
        delta = delta @ layer.weight
    return Gradients(gW, gb, delta)


def lipschitz_bound(net: SortNetwork, p="inf") -> float:
    """Product of per-layer operator norms; activations contribute a factor of 1."""
    p = norm_key(p)
    bound = 1.0
    for layer in net.layers:
        bound *= op_norm(layer.weight, p)
    return bound


@dataclass(frozen=True)
class CertificationReport:
    input: np.ndarray
    predicted_class: int
    margin: float
    lipschitz_bound: float
    certified_radius: float
    norm_p: str

    @property
    def certified(self) -> bool:
        return self.certified_radius > 0


def _margins(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    top2 = np.sort(logits, axis=-1)[..., -2:]
    return np.argmax(logits, axis=-1), top2[..., 1] - top2[..., 0]


def radius_from_margin(margin, bound):
    """margin / (2 * bound): each logit is ``bound``-Lipschitz, so their difference is ``2*bound``-Lipschitz."""
    margin = np.asarray(margin, dtype=np.float64)
    if bound == 0:
        return np.where(margin > 0, np.inf, 0.0)
    return margin / (2.0 * bound)


def certified_radius(net: SortNetwork, x, p="inf", bound: float | None = None) -> CertificationReport:
    if net.output_dim < 2:
        raise InvalidArgument("certification needs at least two output classes")
    p = norm_key(p)
    x = as_vector(x, "input")
    if bound is None:
        bound = lipschitz_bound(net, p)
    logits = forward(net, x)
    cls, margin = _margins(logits)
    return CertificationReport(
        input=x,
        predicted_class=int(cls),
        margin=float(margin),
        lipschitz_bound=float(bound),
        certified_radius=float(radius_from_margin(margin, bound)),
        norm_p=p,
    )


class BatchCertification(NamedTuple):
    predicted: np.ndarray
    margin: np.ndarray
    radius: np.ndarray
    lipschitz_bound: float
    norm_p: str


def certify_batch(net: SortNetwork, X, p="inf") -> BatchCertification:
    """Vectorised :func:`certified_radius` over the rows of ``X``."""
    if net.output_dim < 2:
        raise InvalidArgument("certification needs at least two output classes")
    p = norm_key(p)
    bound = lipschitz_bound(net, p)
    logits = forward(net, np.atleast_2d(X))
    cls, margin = _margins(logits)
    return BatchCertification(cls, margin, radius_from_margin(margin, bound), bound, p)


# -- model file -------------------------------------------------------------
#
#   SORTNET/1
#   input_dim=2
#   layers=3
#   train_norm=inf
#   layer=0 rows=3 cols=2 activation=fullsort
#   W=<hex of little-endian float64, row-major>
#   b=<hex>
#   ...
#   end


def _hex(a: np.ndarray) -> str:
    return np.ascontiguousarray(a, dtype="<f8").tobytes().hex()


def _unhex(text: str, count: int, lineno: int) -> np.ndarray:
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise ParseError(f"bad hex payload: {exc}", line=lineno) from None
    if len(raw) != 8 * count:
        raise ParseError(f"expected {count} float64 values, got {len(raw)} bytes", line=lineno)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def dumps(net: SortNetwork) -> str:
    lines = [
        f"{MAGIC}/{FORMAT_VERSION}",
        f"input_dim={net.input_dim}",
        f"layers={len(net.layers)}",
        f"train_norm={net.train_norm or 'none'}",
    ]
    for i, layer in enumerate(net.layers):
        lines.append(
            f"layer={i} rows={layer.out_dim} cols={layer.in_dim} activation={layer.activation}"
        )
        lines.append(f"W={_hex(layer.weight)}")
        lines.append(f"b={_hex(layer.bias)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _kv(line: str, lineno: int) -> dict[str, str]:
    out = {}
    for tok in line.split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {tok!r}", line=lineno)
        out[key] = value
    return out


def _expect(fields: dict, key: str, lineno: int) -> str:
    if key not in fields:
        raise ParseError(f"missing field {key!r}", line=lineno)
    return fields[key]


def _int(text: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"expected integer, got {text!r}", line=lineno) from None


def loads(text: str) -> SortNetwork:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty model file", line=1)
    magic, sep, version = lines[0].strip().partition("/")
    if magic != MAGIC or not sep:
        raise ParseError(f"bad magic {lines[0]!r}, expected {MAGIC}/{FORMAT_VERSION}", line=1)
    if version != str(FORMAT_VERSION):
        raise VersionError(
            f"unsupported model format version {version!r} (this build reads {FORMAT_VERSION})",
            line=1,
        )

    pos = 1

    def next_line() -> tuple[str, int]:
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("unexpected end of file", line=pos + 1)
        pos += 1
        return lines[pos - 1].strip(), pos

    header = {}
    for _ in range(3):
        line, ln = next_line()
        header.update({k: (v, ln) for k, v in _kv(line, ln).items()})
    for key in ("input_dim", "layers", "train_norm"):
        if key not in header:
            raise ParseError(f"missing header field {key!r}", line=pos)
    n_layers = _int(*header["layers"])
    train_norm = header["train_norm"][0]
    train_norm = None if train_norm == "none" else train_norm

    layers = []
    for i in range(n_layers):
        line, ln = next_line()
        f = _kv(line, ln)
        if _int(_expect(f, "layer", ln), ln) != i:
            raise ParseError(f"expected layer {i}", line=ln)
        rows = _int(_expect(f, "rows", ln), ln)
        cols = _int(_expect(f, "cols", ln), ln)
        try:
            spec = ActivationSpec.parse(_expect(f, "activation", ln))
        except InvalidArgument as exc:
            raise ParseError(str(exc), line=ln) from None
        line, ln = next_line()
        if not line.startswith("W="):
            raise ParseError("expected W= line", line=ln)
        W = _unhex(line[2:], rows * cols, ln).reshape(rows, cols)
        line, ln = next_line()
        if not line.startswith("b="):
            raise ParseError("expected b= line", line=ln)
        b = _unhex(line[2:], rows, ln)
        try:
            layers.append(Layer(W, b, spec))
        except InvalidArgument as exc:
            raise ParseError(str(exc), line=ln) from None
    line, ln = next_line()
    if line != "end":
        raise ParseError("expected 'end'", line=ln)
    try:
        net = SortNetwork(layers, train_norm)
    except InvalidArgument as exc:
        raise ParseError(str(exc), line=ln) from None
    if net.input_dim != _int(*header["input_dim"]):
        raise ParseError("input_dim does not match first layer", line=header["input_dim"][1])
    return net


def save(net: SortNetwork, path) -> None:
    Path(path).write_text(dumps(net))


def load(path) -> SortNetwork:
    return loads(Path(path).read_text())
