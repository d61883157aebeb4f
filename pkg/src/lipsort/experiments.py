"""End-to-end experiment drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lattice as lat
from .activations import ActivationSpec
from .data import LabeledDataset, SpiralSpec, gen_spiral
from .linalg import op_norm_inf
from .network import Layer, SortNetwork, certify_batch, forward
from .training import (
    EmpiricalLipschitz,
    TrainConfig,
    empirical_lipschitz,
    fit_regression,
    train,
)


def grid_points(lo, hi, n: int) -> np.ndarray:
    """``n^d`` points of a regular grid over the box, first coordinate varying slowest."""
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)


# -- half gable ---------------------------------------------------------------


def naive_first_layer() -> tuple[np.ndarray, np.ndarray]:
    """The obvious first layer: one row per half-gable plane, all biases 1."""
    return np.array([[0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]]), np.ones(3)


def naive_two_layer(pick: int) -> SortNetwork:
    """Naive first layer followed by a one-hot read-out of sorted position ``pick``."""
    W0, b0 = naive_first_layer()
    W1 = np.zeros((1, 3))
    W1[0, pick] = 1.0
    return SortNetwork(
        [Layer(W0, b0, ActivationSpec.fullsort()), Layer(W1, np.zeros(1))], "inf"
    )


def order_statistic_two_layer() -> SortNetwork:
    """A two-layer FullSort net equal to the half gable.

    ``max(y + 1, min(1 - x, 1 + x))`` is the third smallest of the multiset
    ``{y + 1, y + 1, 1 - x, 1 + x}``: duplicating one plane turns this lattice
    into an order statistic, which a single sort plus a one-hot row reads off.
    """
    W0 = np.array([[0.0, 1.0], [0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]])
    W1 = np.array([[0.0, 0.0, 1.0, 0.0]])
    return SortNetwork(
        [Layer(W0, np.ones(4), ActivationSpec.fullsort()), Layer(W1, np.zeros(1))], "inf"
    )


HALF_GABLE_TWO_LAYER = "16:fullsort,1:none"
HALF_GABLE_THREE_LAYER = "12:fullsort,6:fullsort,1:none"


def half_gable_config(architecture: str, seed: int) -> TrainConfig:
    """Training protocol used for both depths: unit-norm layers enforced by L1-ball projection."""
    return TrainConfig(
        architecture=architecture,
        learning_rate=0.03,
        lr_final=1e-4,
        epochs=300,
        batch_size=64,
        seed=seed,
        project=True,
        project_bound=1.0,
        projection="l1_ball",
        loss="mse",
    )


@dataclass
class FitSummary:
    architecture: str
    net: SortNetwork
    train_loss: float
    grid_max_err: float
    losses_by_seed: list[float] = field(default_factory=list)
    errors_by_seed: list[float] = field(default_factory=list)


def fit_half_gable(
    architecture: str, seeds=range(4), train_points: int = 51, eval_points: int = 101
) -> FitSummary:
    """Best of several restarts (by final training loss) on a regular grid sample.

    ``grid_max_err`` is measured on the finer evaluation grid, so it includes
    any deviation between training points.
    """
    L = lat.half_gable()
    Zt = grid_points(L.lo, L.hi, train_points)
    yt = lat.eval_lattice(L, Zt)
    Ze = grid_points(L.lo, L.hi, eval_points)
    ye = lat.eval_lattice(L, Ze)
    best = None
    losses, errors = [], []
    for seed in seeds:
        res = fit_regression(half_gable_config(architecture, seed), Zt, yt)
        loss = res.metrics[-1].loss
        losses.append(loss)
        errors.append(float(np.abs(forward(res.net, Ze)[:, 0] - ye).max()))
        if best is None or loss < best[0]:
            best = (loss, res.net, errors[-1])
    loss, net, err = best
    return FitSummary(architecture, net, loss, err, losses, errors)


@dataclass
class HalfGableDemo:
    lattice: lat.LatticePWL
    compiled: SortNetwork
    compiled_max_err: float
    compiled_norms: list[float]
    two_layer: FitSummary
    three_layer: FitSummary
    grid: np.ndarray  # rows: x, y, target, two_layer, three_layer, compiled
    naive_outputs: np.ndarray  # rows: x, y, pick0, pick1, pick2


def half_gable_demo(seeds=range(4), eval_points: int = 101) -> HalfGableDemo:
    L = lat.half_gable()
    net = lat.compile_to_fullsort(L)
    Z = grid_points(L.lo, L.hi, eval_points)
    target = lat.eval_lattice(L, Z)
    compiled = forward(net, Z)[:, 0]
    two = fit_half_gable(HALF_GABLE_TWO_LAYER, seeds, eval_points=eval_points)
    three = fit_half_gable(HALF_GABLE_THREE_LAYER, seeds, eval_points=eval_points)
    grid = np.column_stack(
        [Z, target, forward(two.net, Z)[:, 0], forward(three.net, Z)[:, 0], compiled]
    )
    naive = np.column_stack([Z] + [forward(naive_two_layer(k), Z)[:, 0] for k in range(3)])
    return HalfGableDemo(
        L,
        net,
        float(np.abs(compiled - target).max()),
        [op_norm_inf(W) for W in net.weights],
        two,
        three,
        grid,
        naive,
    )


# -- spiral tightness -----------------------------------------------------------

SPIRAL_GROUPSORT = "40:gs10,40:gs10,2:none"
SPIRAL_RELU = "40:relu,40:relu,2:none"
SPIRAL_BOX = ([-1.1, -1.1], [1.1, 1.1])


def spiral_config(architecture: str, lam: float, seed: int = 0) -> TrainConfig:
    return TrainConfig(
        architecture=architecture,
        lam=lam,
        norm_p="inf",
        learning_rate=0.005,
        epochs=100,
        batch_size=32,
        seed=seed,
    )


@dataclass
class TightnessRow:
    name: str
    lam: float
    clean_acc: float
    lipschitz: EmpiricalLipschitz
    net: SortNetwork


def spiral_tightness(
    data: LabeledDataset | None = None,
    groupsort_lam: float = 0.01,
    relu_lams=(0.01, 0.003, 0.001),
    grid: int = 301,
    seed: int = 0,
) -> tuple[TightnessRow, TightnessRow]:
    """Train the GroupSort-10 and ReLU spiral classifiers and measure bound tightness.

    The ReLU baseline is the best-accuracy model over ``relu_lams``; the
    GroupSort model uses ``groupsort_lam``.
    """
    data = data if data is not None else gen_spiral(SpiralSpec(seed=seed))
    gs = train(spiral_config(SPIRAL_GROUPSORT, groupsort_lam, seed), data)
    gs_row = TightnessRow(
        "3-Layer GroupSort-10",
        groupsort_lam,
        gs.metrics[-1].clean_acc,
        empirical_lipschitz(gs.net, *SPIRAL_BOX, grid),
        gs.net,
    )
    best = None
    for lam in relu_lams:
        res = train(spiral_config(SPIRAL_RELU, lam, seed), data)
        if best is None or res.metrics[-1].clean_acc > best[1].metrics[-1].clean_acc:
            best = (lam, res)
    lam, res = best
    relu_row = TightnessRow(
        "3-Layer ReLU",
        lam,
        res.metrics[-1].clean_acc,
        empirical_lipschitz(res.net, *SPIRAL_BOX, grid),
        res.net,
    )
    return gs_row, relu_row


def certified_region(net: SortNetwork, lo, hi, n: int, radius: float, p="inf") -> np.ndarray:
    """Grid rows ``x0, x1, predicted, certified_radius, certified`` (certified: radius >= ``radius``)."""
    Z = grid_points(lo, hi, n)
    c = certify_batch(net, Z, p)
    return np.column_stack([Z, c.predicted, c.radius, c.radius >= radius])


# -- certified accuracy curves ----------------------------------------------------


def certified_accuracy_curve(net: SortNetwork, data: LabeledDataset, radii, p="inf") -> np.ndarray:
    """Rows ``radius, certified_acc, clean_acc``.

    A sample counts as certified at ``r`` when it is classified correctly and
    its certified radius is at least ``r``.
    """
    c = certify_batch(net, data.inputs, p)
    ok = c.predicted == data.labels
    clean = float(ok.mean())
    return np.array([[r, float((ok & (c.radius >= r)).mean()), clean] for r in radii])


MNIST_GROUPSORT = "200:gs10,10:none"
MNIST_RELU = "200:relu,10:none"


def mnist_config(architecture: str, seed: int = 0) -> TrainConfig:
    return TrainConfig(
        architecture=architecture,
        lam=0.01,
        norm_p="inf",
        learning_rate=0.003,
        lr_final=0.0003,
        epochs=40,
        batch_size=128,
        seed=seed,
    )
