"""Lipschitz-penalised training and empirical Lipschitz estimation.

The training objective is mean softmax cross-entropy plus ``lam`` times the
product of the per-layer operator norms, i.e. ``lam`` times the network's
Lipschitz bound.  An optional projection step rescales weights after each
update so every layer's operator norm stays at or below ``project_bound``.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .activations import ActivationSpec
from .data import LabeledDataset
from .errors import CapacityError, DegenerateGradient, InvalidArgument, TrainingDiverged
from .linalg import norm_key, op_norm, op_norm_2, op_norm_inf, power_iteration, vec_norm
from .network import Layer, SortNetwork, _backward_from_trace, _forward_trace, forward, lipschitz_bound

GRID_DIM_GUARD = 3
GRID_POINT_GUARD = 5 * 10**6


def parse_architecture(text: str) -> list[tuple[int, ActivationSpec]]:
    """``"40:gs10,40:gs10,2:none"`` -> ``[(40, groupsort:10), (40, groupsort:10), (2, none)]``."""
    arch = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        width, _, spec = item.partition(":")
        try:
            arch.append((int(width), ActivationSpec.parse(spec or "none")))
        except ValueError:
            raise InvalidArgument(f"bad architecture entry {item!r}") from None
    return arch


def format_architecture(arch) -> str:
    return ",".join(f"{w}:{spec}" for w, spec in arch)


@dataclass
class TrainConfig:
    # layer widths with their activations, output layer last
    architecture: list = field(
        default_factory=lambda: parse_architecture("40:gs10,40:gs10,2:none")
    )
    lam: float = 0.0
    norm_p: str = "inf"
    learning_rate: float = 1e-3
    lr_final: float = 0.0  # > 0: geometric decay from learning_rate to this over the run
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    loss: str = "cross_entropy"  # or "mse" for scalar regression
    project: bool = False
    project_bound: float = 1.0
    projection: str = "rescale"  # or "l1_ball" (Euclidean projection, inf norm only)

    def __post_init__(self):
        if isinstance(self.architecture, str):
            self.architecture = parse_architecture(self.architecture)
        self.norm_p = norm_key(self.norm_p)
        if not self.architecture:
            raise InvalidArgument("architecture is empty")
        for w, spec in self.architecture:
            if w < 1:
                raise InvalidArgument("layer widths must be positive")
            spec.check_width(w)
        if self.architecture[-1][1].kind != "none":
            raise InvalidArgument("the output layer must not have an activation")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InvalidArgument("lam must be finite and >= 0")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("cross_entropy", "mse"):
            raise InvalidArgument(f"unknown loss {self.loss!r}")
        if self.projection not in ("rescale", "l1_ball"):
            raise InvalidArgument(f"unknown projection {self.projection!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgument("epochs must be >= 0 and batch_size >= 1")

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        """Build from string values (config file or CLI flags); unknown keys are rejected."""
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        aliases = {"lambda": "lam", "norm": "norm_p", "lr": "learning_rate"}
        updates = {}
        for key, raw in values.items():
            name = aliases.get(key, key)
            if name not in types:
                raise InvalidArgument(f"unknown config key {key!r}")
            raw = str(raw).strip()
            if name == "architecture":
                updates[name] = parse_architecture(raw)
            elif types[name] in ("bool", bool):
                updates[name] = raw.lower() in ("1", "true", "yes", "on")
            elif types[name] in ("int", int):
                updates[name] = int(raw)
            elif types[name] in ("float", float):
                updates[name] = float(raw)
            else:
                updates[name] = raw
        return replace(base, **updates)

    @classmethod
    def from_file(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        values = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InvalidArgument(f"config line without '=': {raw!r}")
            values[key.strip()] = value.strip()
        return cls.from_mapping(values, base)

    def dumps(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "architecture":
                v = format_architecture(v)
            out.append(f"{f.name}={v}")
        return "\n".join(out) + "\n"


# -- initialisation -------------------------------------------------------------


def init_network(config: TrainConfig, input_dim: int, rng: np.random.Generator) -> SortNetwork:
    """Gaussian weights rescaled to unit operator norm per layer (unit row L1 norm for inf)."""
    layers = []
    fan_in = input_dim
    for width, spec in config.architecture:
        W = rng.standard_normal((width, fan_in))
        if config.norm_p == "inf":
            W /= np.abs(W).sum(axis=1, keepdims=True)
        else:
            W /= op_norm_2(W)
        layers.append(Layer(W, np.zeros(width), spec))
        fan_in = width
    return SortNetwork(layers, config.norm_p)


# -- losses -------------------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def mean_squared_error(outputs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    diff = outputs - targets.reshape(outputs.shape)
    n = outputs.shape[0]
    return float(0.5 * (diff * diff).sum() / n), diff / n


def lipschitz_penalty(net: SortNetwork, p) -> float:
    return lipschitz_bound(net, p)


def penalized_loss(net: SortNetwork, batch: LabeledDataset, lam: float, p="inf") -> float:
    if lam < 0:
        raise InvalidArgument("lam must be >= 0")
    if len(batch) == 0:
        raise InvalidArgument("empty batch")
    ce, _ = softmax_cross_entropy(forward(net, batch.inputs), batch.labels)
    if lam == 0:
        return ce
    return ce + lam * lipschitz_penalty(net, p)


def penalty_gradient(net: SortNetwork, p="inf") -> list[np.ndarray]:
    """Subgradient of the product of per-layer operator norms with respect to each weight matrix.

    For inf the norm's subgradient is the sign pattern of the row with the
    largest absolute sum (lowest index on ties); for 2 it is ``u v^T`` from
    the top singular pair.
    """
    p = norm_key(p)
    norms, local = [], []
    for layer in net.layers:
        W = layer.weight
        if p == "inf":
            sums = np.abs(W).sum(axis=1)
            r = int(np.argmax(sums))  # first maximiser
            g = np.zeros_like(W)
            g[r] = np.sign(W[r])
            norms.append(float(sums[r]))
        else:
            if not np.any(W):
                raise DegenerateGradient("spectral norm is not differentiable at a zero matrix")
            # singular vectors converge like the square root of sigma, so tighten the stop
            res = power_iteration(W, iters=2000, tol=1e-14 * max(1.0, op_norm_inf(W)))
            g = np.outer(res.u, res.v)
            norms.append(res.sigma)
        local.append(g)
    grads = []
    for i, g in enumerate(local):
        others = math.prod(n for j, n in enumerate(norms) if j != i)
        grads.append(others * g)
    return grads


# -- optimisers ---------------------------------------------------------------


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGDMomentum:
    def __init__(self, params: list[np.ndarray], lr=1e-2, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.buf = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, b in zip(params, grads, self.buf):
            b *= self.momentum
            b += g
            p -= self.lr * b


def make_optimizer(config: TrainConfig, params):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate, config.beta1, config.beta2)
    return SGDMomentum(params, config.learning_rate, config.momentum)


def project_rows_l1(W: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of every row of ``W`` onto the L1 ball of ``radius``.

    Sort-based soft thresholding: rows already inside the ball are untouched.
    """
    W = np.asarray(W, dtype=np.float64)
    a = np.abs(W)
    outside = a.sum(axis=1) > radius
    if not np.any(outside):
        return W.copy()
    out = W.copy()
    u = -np.sort(-a[outside], axis=1)
    css = np.cumsum(u, axis=1) - radius
    k = np.arange(1, W.shape[1] + 1)
    rho = (u - css / k > 0).sum(axis=1)
    theta = css[np.arange(u.shape[0]), rho - 1] / rho
    out[outside] = np.sign(W[outside]) * np.maximum(a[outside] - theta[:, None], 0.0)
    return out


def project_weights(net: SortNetwork, p="inf", bound: float = 1.0, method: str = "rescale") -> None:
    """Enforce every layer's operator norm <= ``bound`` in place.

    ``rescale`` divides offending rows (inf) or the whole matrix (2) by the
    excess; ``l1_ball`` instead projects each row onto the L1 ball, which
    zeroes small entries.
    """
    p = norm_key(p)
    for layer in net.layers:
        W = layer.weight
        if method == "l1_ball":
            if p != "inf":
                raise InvalidArgument("l1_ball projection applies to the inf norm only")
            W[...] = project_rows_l1(W, bound)
        elif p == "inf":
            sums = np.abs(W).sum(axis=1, keepdims=True)
            np.divide(W, np.maximum(sums / bound, 1.0), out=W)
        else:
            s = op_norm(W, "2")
            if s > bound:
                W *= bound / s


# -- training loop ------------------------------------------------------------


class EpochMetrics(NamedTuple):
    epoch: int
    loss: float
    clean_acc: float
    bound: float
    wall_ms: float

    def deterministic(self) -> tuple:
        return self[:4]


class TrainResult(NamedTuple):
    net: SortNetwork
    metrics: list[EpochMetrics]


METRICS_HEADER = "epoch,loss,clean_acc,bound,wall_ms"


def metrics_csv(metrics: list[EpochMetrics]) -> str:
    rows = [METRICS_HEADER]
    rows += [f"{m.epoch},{m.loss!r},{m.clean_acc!r},{m.bound!r},{m.wall_ms:.1f}" for m in metrics]
    return "\n".join(rows) + "\n"


def train(
    config: TrainConfig,
    data: LabeledDataset,
    init: SortNetwork | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Minibatch training with the Lipschitz penalty.

    Shuffling and initialisation draw from one generator seeded with
    ``config.seed``, so identical inputs give bit-identical weights.
    """
    if config.loss != "cross_entropy":
        raise InvalidArgument("train() is for classification; use fit_regression() for mse")
    if config.architecture[-1][0] != data.num_classes:
        raise InvalidArgument(
            f"output width {config.architecture[-1][0]} != num_classes {data.num_classes}"
        )
    return _fit(config, data.inputs, data.labels, init, on_epoch)


def fit_regression(
    config: TrainConfig,
    inputs: np.ndarray,
    targets: np.ndarray,
    init: SortNetwork | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Least-squares fit of a scalar-output network; ``clean_acc`` reports the max abs error."""
    config = replace(config, loss="mse")
    if config.architecture[-1][0] != 1:
        raise InvalidArgument("regression needs a single output unit")
    return _fit(config, np.asarray(inputs, dtype=np.float64), np.asarray(targets, dtype=np.float64), init, on_epoch)


def _objective(config: TrainConfig, out: np.ndarray, targets: np.ndarray):
    if config.loss == "mse":
        return mean_squared_error(out, targets)
    return softmax_cross_entropy(out, targets)


def _quality(config: TrainConfig, out: np.ndarray, targets: np.ndarray) -> float:
    if config.loss == "mse":
        return float(np.abs(out.reshape(-1) - targets.reshape(-1)).max())
    return float((out.argmax(axis=1) == targets).mean())


def _fit(config, X, Y, init, on_epoch) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    net = init.copy() if init is not None else init_network(config, X.shape[1], rng)
    if init is not None:
        _check_arch(net, config, X.shape[1])
    params = [t for layer in net.layers for t in (layer.weight, layer.bias)]
    opt = make_optimizer(config, params)
    n = X.shape[0]
    if n == 0:
        raise InvalidArgument("empty training set")
    metrics = []
    t0 = time.perf_counter()
    decay = 1.0
    if config.lr_final > 0 and config.epochs > 1:
        decay = (config.lr_final / config.learning_rate) ** (1.0 / (config.epochs - 1))
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.learning_rate * decay ** (epoch - 1)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            trace = _forward_trace(net, X[idx])
            loss, upstream = _objective(config, trace.out, Y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}")
            g = _backward_from_trace(net, trace, upstream)
            if config.lam != 0:
                for gw, gp in zip(g.weights, penalty_gradient(net, config.norm_p)):
                    gw += config.lam * gp
            grads = [t for pair in zip(g.weights, g.biases) for t in pair]
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(params, grads)
            if not all(np.isfinite(t).all() for t in params):
                raise TrainingDiverged(f"parameters became non-finite at epoch {epoch}")
            if config.project:
                project_weights(net, config.norm_p, config.project_bound, config.projection)
        out = forward(net, X)
        loss, _ = _objective(config, out, Y)
        bound = lipschitz_bound(net, config.norm_p)
        total = loss + config.lam * bound if config.lam else loss
        if not math.isfinite(total):
            raise TrainingDiverged(f"loss became {total} at epoch {epoch}")
        m = EpochMetrics(epoch, total, _quality(config, out, Y), bound, (time.perf_counter() - t0) * 1e3)
        metrics.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return TrainResult(net, metrics)


def _check_arch(net: SortNetwork, config: TrainConfig, input_dim: int) -> None:
    arch = [(l.out_dim, l.activation) for l in net.layers]
    if net.input_dim != input_dim or arch != list(config.architecture):
        raise InvalidArgument("initial network does not match the configured architecture")


def accuracy(net: SortNetwork, data: LabeledDataset) -> float:
    return float((forward(net, data.inputs).argmax(axis=1) == data.labels).mean())


# -- empirical Lipschitz constant ----------------------------------------------


class EmpiricalLipschitz(NamedTuple):
    empirical: float
    bound: float
    ratio: float  # bound / empirical, inf when the network is flat


def scalar_view(net: SortNetwork, X: np.ndarray) -> np.ndarray:
    """The scalar whose slope is measured: raw output for one-output nets, half the top-two margin otherwise.

    Both are ``lipschitz_bound``-Lipschitz, so the measured slope never exceeds the bound.
    """
    out = forward(net, X)
    if net.output_dim == 1:
        return out[..., 0]
    top2 = np.sort(out, axis=-1)[..., -2:]
    return 0.5 * (top2[..., 1] - top2[..., 0])


def _result(net, empirical, p) -> EmpiricalLipschitz:
    bound = lipschitz_bound(net, p)
    ratio = bound / empirical if empirical > 0 else math.inf
    return EmpiricalLipschitz(float(empirical), bound, ratio)


def empirical_lipschitz(net: SortNetwork, lo, hi, grid_points_per_dim: int, p="inf") -> EmpiricalLipschitz:
    """Largest finite-difference slope between neighbouring nodes of a regular grid.

    Neighbours are all ``3^d - 1`` offsets in ``{-1, 0, 1}^d`` (axis and diagonal
    steps), distances measured in the ``p`` norm.
    """
    p = norm_key(p)
    lo = np.asarray(lo, dtype=np.float64).reshape(-1)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1)
    d = lo.shape[0]
    if d != net.input_dim:
        raise InvalidArgument(f"box has {d} dims, network expects {net.input_dim}")
    if d > GRID_DIM_GUARD or grid_points_per_dim**d > GRID_POINT_GUARD:
        raise CapacityError(
            f"a {grid_points_per_dim}^{d} grid is too large; use sampled_lipschitz() instead"
        )
    if grid_points_per_dim < 2:
        raise InvalidArgument("need at least two grid points per dimension")
    axes = [np.linspace(lo[k], hi[k], grid_points_per_dim) for k in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    g = scalar_view(net, mesh.reshape(-1, d)).reshape(mesh.shape[:-1])
    best = 0.0
    for off in itertools.product((-1, 0, 1), repeat=d):
        off = np.array(off)
        nz = np.flatnonzero(off)
        if nz.size == 0 or off[nz[0]] < 0:  # each unordered pair once
            continue
        a = tuple(slice(max(0, -o), grid_points_per_dim - max(0, o)) for o in off)
        b = tuple(slice(max(0, o), grid_points_per_dim - max(0, -o)) for o in off)
        dz = mesh[b] - mesh[a]
        slope = np.abs(g[b] - g[a]) / vec_norm(dz, p)
        best = max(best, float(slope.max()))
    return _result(net, best, p)


def sampled_lipschitz(
    net: SortNetwork, lo, hi, n_pairs: int, p="inf", step: float = 1e-3, seed: int = 0
) -> EmpiricalLipschitz:
    """Random-pair alternative to the grid for high-dimensional inputs.

    Draws base points uniformly in the box and partners at ``p``-distance ``step``.
    """
    p = norm_key(p)
    rng = np.random.default_rng(seed)
    lo = np.asarray(lo, dtype=np.float64).reshape(-1)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1)
    x = rng.uniform(lo, hi, size=(n_pairs, lo.shape[0]))
    if p == "inf":
        d = rng.choice([-1.0, 1.0], size=x.shape)
    else:
        d = rng.standard_normal(x.shape)
        d /= vec_norm(d, 2)[:, None]
    y = np.clip(x + step * d, lo, hi)
    dist = vec_norm(y - x, p)
    keep = dist > 0
    slope = np.abs(scalar_view(net, y) - scalar_view(net, x))[keep] / dist[keep]
    return _result(net, float(slope.max()) if slope.size else 0.0, p)
