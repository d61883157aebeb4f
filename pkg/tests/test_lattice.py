import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipsort import lattice as lat
from lipsort.activations import sort_permutation
from lipsort.errors import (
    CapacityError,
    InfeasibleSeparation,
    InvalidArgument,
    NotInClassG,
    OutOfDomain,
    ParseError,
    VersionError,
)
from lipsort.lattice import Hyperplane, LatticePWL
from lipsort.linalg import op_norm_inf
from lipsort.network import forward

from lipsort.experiments import grid_points as grid


def brute_force(L, z):
    """min-max by explicit enumeration of (subset, plane) pairs."""
    best = np.inf
    for s in L.subsets:
        best = min(best, max(float(np.dot(L.planes[j].gradient, z) + L.planes[j].offset) for j in s))
    return best


def random_points(rng, L, n):
    return rng.uniform(L.lo, L.hi, size=(n, L.dim))


class TestEval:
    def test_identity(self):
        L = LatticePWL([Hyperplane([1.0, 0.0], 0.0)], [(0,)], [-1, -1], [1, 1])
        assert lat.eval_lattice(L, [0.3, -0.9]) == pytest.approx(0.3)

    def test_absolute_value(self):
        assert lat.eval_lattice(lat.absolute_value(), [-0.3]) == pytest.approx(0.3)

    def test_half_gable_against_brute_force(self, rng):
        L = lat.half_gable()
        for z in [np.zeros(2), *random_points(rng, L, 200)]:
            assert lat.eval_lattice(L, z) == pytest.approx(brute_force(L, z), abs=1e-15)

    def test_half_gable_shape(self):
        L = lat.half_gable()
        Z = grid([-1, -1], [1, 1], 41)
        x, y = Z[:, 0], Z[:, 1]
        np.testing.assert_allclose(lat.eval_lattice(L, Z), np.maximum(y + 1, 1 - np.abs(x)), atol=1e-15)

    def test_out_of_domain(self):
        with pytest.raises(OutOfDomain):
            lat.eval_lattice(lat.absolute_value(), [1.5])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            lat.eval_lattice(lat.absolute_value(), [0.1, 0.2])

    def test_random_against_brute_force(self, rng):
        for _ in range(50):
            L = lat.random_lattice(rng)
            for z in random_points(rng, L, 20):
                assert lat.eval_lattice(L, z) == pytest.approx(brute_force(L, z), abs=1e-14)


class TestValidation:
    def test_unreferenced_plane(self):
        with pytest.raises(InvalidArgument):
            LatticePWL([Hyperplane([1.0], 0), Hyperplane([-1.0], 0)], [(0,)], [-1], [1])

    def test_bad_index(self):
        with pytest.raises(InvalidArgument):
            LatticePWL([Hyperplane([1.0], 0)], [(0, 3)], [-1], [1])

    def test_bad_box(self):
        with pytest.raises(InvalidArgument):
            LatticePWL([Hyperplane([1.0], 0)], [(0,)], [1], [-1])

    def test_duplicate_indices_collapse(self):
        L = LatticePWL([Hyperplane([1.0], 0)], [(0, 0, 0)], [-1], [1])
        assert L.subsets == ((0,),)


class TestDual:
    def test_single_plane(self):
        L = LatticePWL([Hyperplane([1.0], 0.5)], [(0,)], [-1], [1])
        assert lat.eval_dual(L, [0.25]) == pytest.approx(0.75)
        assert lat.dual_convert(L).subsets == ((0,),)

    def test_singletons_give_max(self):
        L = LatticePWL([Hyperplane([1.0], 0), Hyperplane([-1.0], 0)], [(0,), (1,)], [-1], [1])
        assert lat.eval_dual(L, [-0.4]) == pytest.approx(0.4)

    def test_one_subset_splits(self):
        L = lat.absolute_value()
        assert lat.dual_convert(L).subsets == ((0,), (1,))

    def test_random_pointwise_equal(self, rng):
        for _ in range(30):
            L = lat.random_lattice(rng)
            D = lat.dual_convert(L)
            Z = random_points(rng, L, 1000)
            np.testing.assert_allclose(lat.eval_dual(D, Z), lat.eval_lattice(L, Z), atol=1e-14)

    def test_guard(self):
        planes = [Hyperplane([1.0], float(j)) for j in range(10)]
        L = LatticePWL(planes, [tuple(range(10))] * 1 + [tuple(range(10))], [-1], [1])
        with pytest.raises(CapacityError):
            lat.dual_convert(L, guard=50)


class TestSeparatingPair:
    def test_unit_interval_example(self):
        f0, f1 = lat.make_separating_pair([0.2], [0.8], 0.6, 0.4)
        np.testing.assert_allclose(f0.gradient, [-1.0])
        assert f0.offset == pytest.approx(0.8)
        np.testing.assert_allclose(f1.gradient, [1.0])
        assert f1.offset == pytest.approx(-0.4)
        assert max(f0([0.2]), f1([0.2])) == pytest.approx(0.6)
        assert max(f0([0.8]), f1([0.8])) == pytest.approx(0.4)

    def test_equal_values(self):
        f0, f1 = lat.make_separating_pair([0.0, 1.0], [0.5, -1.0], 0.3, 0.3)
        assert max(f0([0.0, 1.0]), f1([0.0, 1.0])) == pytest.approx(0.3)
        assert max(f0([0.5, -1.0]), f1([0.5, -1.0])) == pytest.approx(0.3)

    def test_infeasible(self):
        with pytest.raises(InfeasibleSeparation):
            lat.make_separating_pair([0.0], [0.1], 0.0, 1.0)

    def test_same_point(self):
        with pytest.raises(InvalidArgument):
            lat.make_separating_pair([0.3], [0.3], 0.0, 0.0)

    def test_random(self, rng):
        for _ in range(2000):
            d = int(rng.integers(1, 5))
            x, y = rng.uniform(-1, 1, size=(2, d))
            dist = np.abs(x - y).max()
            a = rng.uniform(-2, 2)
            b = a + rng.uniform(-dist, dist)
            f0, f1 = lat.make_separating_pair(x, y, a, b)
            assert max(f0(x), f1(x)) == pytest.approx(a, abs=1e-12)
            assert max(f0(y), f1(y)) == pytest.approx(b, abs=1e-12)
            assert np.abs(f0.gradient).max() == pytest.approx(1.0, abs=1e-15)
            assert np.abs(f1.gradient).max() == pytest.approx(1.0, abs=1e-15)


class TestAlpha:
    def test_constant_plane(self):
        L = LatticePWL([Hyperplane([0.0, 0.0, 0.0], 2.0)], [(0,)], -np.ones(3), np.ones(3))
        assert lat.compute_alpha(L) == 3.0

    def test_unit_plane(self):
        L = LatticePWL([Hyperplane([1.0, 0.0], 0.0)], [(0,)], [-1, -1], [1, 1])
        assert lat.compute_alpha(L) == 2.0

    def test_strict_bound(self, rng):
        for _ in range(50):
            L = lat.random_lattice(rng)
            vals = L.plane_values(random_points(rng, L, 500))
            assert np.abs(vals).max() < lat.compute_alpha(L)


class TestCompiler:
    def test_identity(self, rng):
        L = LatticePWL([Hyperplane([1.0, 0.0], 0.0)], [(0,)], [-1, -1], [1, 1])
        net = lat.compile_to_fullsort(L)
        Z = random_points(rng, L, 100)
        np.testing.assert_allclose(forward(net, Z)[:, 0], Z[:, 0], atol=1e-15)

    def test_absolute_value(self):
        net = lat.compile_to_fullsort(lat.absolute_value())
        x = np.linspace(-1, 1, 1000)[:, None]
        assert np.abs(forward(net, x)[:, 0] - np.abs(x[:, 0])).max() <= 1e-12

    def test_half_gable(self):
        L = lat.half_gable()
        net = lat.compile_to_fullsort(L)
        Z = grid(L.lo, L.hi, 101)
        assert np.abs(forward(net, Z)[:, 0] - lat.eval_lattice(L, Z)).max() <= 1e-12
        assert [op_norm_inf(W) for W in net.weights] == [1.0, 1.0, 1.0]

    def test_random_lattices(self, rng):
        for _ in range(30):
            L = lat.random_lattice(rng)
            net = lat.compile_to_fullsort(L)
            Z = random_points(rng, L, 2000)
            assert np.abs(forward(net, Z)[:, 0] - lat.eval_lattice(L, Z)).max() <= 1e-9
            assert all(op_norm_inf(W) == 1.0 for W in net.weights)

    def test_not_in_class_g(self):
        L = LatticePWL([Hyperplane([0.8, 0.4], 0.0)], [(0,)], [-1, -1], [1, 1])
        with pytest.raises(NotInClassG):
            lat.compile_to_fullsort(L)

    def test_block_ordering_invariant(self, rng):
        # after the first sort, subset i's entries occupy exactly block i
        for _ in range(20):
            L = lat.random_lattice(rng)
            net = lat.compile_to_fullsort(L)
            ends = lat.block_ends(L)
            starts = np.concatenate([[0], ends[:-1] + 1])
            layer = net.layers[0]
            for z in random_points(rng, L, 200):
                perm = sort_permutation(layer.weight @ z + layer.bias, 0)
                for s, e in zip(starts, ends):
                    assert set(perm[s : e + 1]) == set(range(s, e + 1))


class TestLipschitz:
    def test_one_lipschitz_inf(self, rng):
        for _ in range(20):
            L = lat.random_lattice(rng)
            X = random_points(rng, L, 2000)
            Y = random_points(rng, L, 2000)
            q = np.abs(lat.eval_lattice(L, X) - lat.eval_lattice(L, Y)) / np.abs(X - Y).max(axis=1)
            assert q.max() <= 1 + 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_compiled_matches(self, seed):
        r = np.random.default_rng(seed)
        L = lat.random_lattice(r)
        Z = random_points(r, L, 50)
        assert np.abs(forward(lat.compile_to_fullsort(L), Z)[:, 0] - lat.eval_lattice(L, Z)).max() <= 1e-9


class TestFile:
    def test_round_trip(self, rng, tmp_path):
        L = lat.random_lattice(rng)
        lat.save_lattice(L, tmp_path / "l.lat")
        back = lat.load_lattice(tmp_path / "l.lat")
        assert back.subsets == L.subsets
        np.testing.assert_array_equal(back.gradients, L.gradients)
        np.testing.assert_array_equal(back.offsets, L.offsets)

    def test_comments(self):
        text = "# abs\nLATTICE/1\ndim 1\nlo -1\nhi 1  # box\nplane 1 0\nplane -1 0\n\nsubset 0 1\n"
        assert lat.eval_lattice(lat.lattice_loads(text), [-0.5]) == 0.5

    def test_version(self):
        with pytest.raises(VersionError):
            lat.lattice_loads("LATTICE/9\n")

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "NOPE/1\n",
            "LATTICE/1\nlo -1\n",
            "LATTICE/1\ndim 1\nlo -1\nhi 1\nplane 1\nsubset 0\n",
            "LATTICE/1\ndim 1\nlo -1\nhi 1\nplane 1 0\nsubset 4\n",
            "LATTICE/1\ndim 1\nlo -1\nhi 1\nplane x 0\nsubset 0\n",
            "LATTICE/1\ndim 1\nlo -1\nhi 1\nbogus\n",
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            lat.lattice_loads(text)
