import os
from pathlib import Path

import numpy as np
import pytest

from lipsort.activations import ActivationSpec
from lipsort.network import Layer, SortNetwork


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sort_net(rng, dims=(3, 6, 4, 2), act=None):
    act = act or ActivationSpec.fullsort()
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        layers.append(
            Layer(rng.standard_normal((b, a)), rng.standard_normal(b), ActivationSpec.none() if last else act)
        )
    return SortNetwork(layers)


def mnist_dir() -> Path | None:
    d = Path(os.environ.get("LIPSORT_MNIST_DIR", "/root/data/mnist"))
    return d if (d / "train-images-idx3-ubyte").exists() or (d / "train-images-idx3-ubyte.gz").exists() else None


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
