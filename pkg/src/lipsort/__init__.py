"""Lipschitz-constrained GroupSort networks: training, certification and exact lattice compilation."""

from .activations import ActivationSpec, group_sort, group_sort_vjp
from .data import LabeledDataset, SpiralSpec, gen_spiral, load_mnist
from .lattice import (
    Hyperplane,
    LatticePWL,
    compile_to_fullsort,
    compute_alpha,
    dual_convert,
    eval_dual,
    eval_lattice,
    make_separating_pair,
)
from .linalg import op_norm_2, op_norm_inf
from .network import (
    CertificationReport,
    Layer,
    SortNetwork,
    backward,
    certified_radius,
    forward,
    lipschitz_bound,
    load,
    save,
)
from .training import (
    TrainConfig,
    empirical_lipschitz,
    penalized_loss,
    penalty_gradient,
    train,
)

__version__ = "0.1.0"
