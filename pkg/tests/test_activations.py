import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lipsort.activations import (
    ActivationSpec,
    apply,
    group_sort,
    group_sort_vjp,
    relu,
    relu_vjp,
    sort_permutation,
)
from lipsort.errors import InvalidArgument
from lipsort.linalg import vec_norm

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)


def widths_and_groups():
    return st.sampled_from([(4, 2), (8, 4), (6, 3), (5, 0), (8, 0), (6, 1)])


class TestGroupSortExamples:
    def test_pairs(self):
        np.testing.assert_array_equal(group_sort([3, 1, 2, 0], 2), [1, 3, 0, 2])

    def test_fullsort_three_values(self):
        np.testing.assert_array_equal(group_sort([1.2, 0.5, 1.5], 0), [0.5, 1.2, 1.5])

    @pytest.mark.parametrize("g", [0, 1, 2, 4])
    def test_sorted_input_unchanged(self, g):
        x = np.arange(8.0)
        np.testing.assert_array_equal(group_sort(x, g), x)

    def test_group_must_divide(self):
        with pytest.raises(InvalidArgument):
            group_sort(np.ones(5), 2)

    def test_batch_rows_independent(self, rng):
        X = rng.standard_normal((7, 6))
        out = group_sort(X, 3)
        for x, y in zip(X, out):
            np.testing.assert_array_equal(group_sort(x, 3), y)

    def test_stable_ties(self):
        # equal entries keep their original order
        np.testing.assert_array_equal(sort_permutation([1.0, 0.0, 1.0, 0.0], 0), [1, 3, 0, 2])


class TestGroupSortProperties:
    @settings(max_examples=200, deadline=None)
    @given(widths_and_groups().flatmap(lambda wg: st.tuples(arrays(np.float64, wg[0], elements=finite), st.just(wg[1]))))
    def test_permutation_of_input(self, xg):
        x, g = xg
        y = group_sort(x, g)
        np.testing.assert_array_equal(np.sort(y), np.sort(x))

    @settings(max_examples=200, deadline=None)
    @given(widths_and_groups().flatmap(lambda wg: st.tuples(arrays(np.float64, wg[0], elements=finite), st.just(wg[1]))))
    def test_idempotent(self, xg):
        x, g = xg
        y = group_sort(x, g)
        np.testing.assert_array_equal(group_sort(y, g), y)

    @settings(max_examples=200, deadline=None)
    @given(widths_and_groups().flatmap(lambda wg: st.tuples(arrays(np.float64, wg[0], elements=finite), st.just(wg[1]))))
    def test_blocks_ascending(self, xg):
        x, g = xg
        y = group_sort(x, g).reshape(-1, g or x.size)
        assert np.all(np.diff(y, axis=-1) >= 0)

    @pytest.mark.parametrize("p", [1, 2, "inf"])
    @pytest.mark.parametrize("g", [2, 4, 0])
    def test_one_lipschitz(self, rng, p, g):
        X = rng.standard_normal((10_000, 8))
        Y = X + rng.standard_normal((10_000, 8)) * rng.uniform(0.01, 3, size=(10_000, 1))
        lhs = vec_norm(group_sort(X, g) - group_sort(Y, g), p)
        rhs = vec_norm(X - Y, p)
        assert np.sum(lhs > rhs + 1e-12) == 0

    @pytest.mark.parametrize("p", [1, 2, "inf"])
    @pytest.mark.parametrize("g", [2, 4, 0])
    def test_norm_preserving(self, rng, p, g):
        X = rng.standard_normal((10_000, 8))
        np.testing.assert_allclose(vec_norm(group_sort(X, g), p), vec_norm(X, p), rtol=0, atol=1e-12)


class TestVJP:
    def test_identity_permutation(self):
        up = np.array([5.0, 6.0, 7.0])
        np.testing.assert_array_equal(group_sort_vjp([1.0, 2.0, 3.0], 0, up), up)

    def test_swap(self):
        np.testing.assert_array_equal(group_sort_vjp([3.0, 1.0], 2, [10.0, 20.0]), [20.0, 10.0])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            group_sort_vjp(np.ones(4), 2, np.ones(3))

    @pytest.mark.parametrize("g", [2, 3, 0])
    def test_finite_differences(self, rng, g):
        h = 1e-6
        for _ in range(50):
            x = rng.standard_normal(6)
            up = rng.standard_normal(6)
            J = np.empty((6, 6))
            for k in range(6):
                e = np.zeros(6)
                e[k] = h
                J[:, k] = (group_sort(x + e, g) - group_sort(x - e, g)) / (2 * h)
            np.testing.assert_allclose(group_sort_vjp(x, g, up), J.T @ up, atol=1e-6)

    def test_jacobian_is_permutation(self, rng):
        x = rng.standard_normal(6)
        J = np.stack([group_sort_vjp(x, 0, e) for e in np.eye(6)])
        assert np.all(J.sum(axis=0) == 1) and np.all(J.sum(axis=1) == 1)
        assert set(np.unique(J)) <= {0.0, 1.0}


class TestSpec:
    @pytest.mark.parametrize(
        "text, spec",
        [
            ("fullsort", ActivationSpec.fullsort()),
            ("gs10", ActivationSpec.groupsort(10)),
            ("groupsort:4", ActivationSpec.groupsort(4)),
            ("oplu", ActivationSpec.groupsort(2)),
            ("relu", ActivationSpec.relu()),
            ("none", ActivationSpec.none()),
        ],
    )
    def test_parse(self, text, spec):
        assert ActivationSpec.parse(text) == spec
        assert ActivationSpec.parse(str(spec)) == spec

    def test_bad(self):
        with pytest.raises(InvalidArgument):
            ActivationSpec.parse("tanh")
        with pytest.raises(InvalidArgument):
            ActivationSpec.groupsort(3).check_width(10)

    def test_apply(self):
        x = np.array([2.0, -1.0])
        np.testing.assert_array_equal(apply(ActivationSpec.none(), x), x)
        np.testing.assert_array_equal(apply(ActivationSpec.relu(), x), [2.0, 0.0])
        np.testing.assert_array_equal(apply(ActivationSpec.oplu(), x), [-1.0, 2.0])


class TestRelu:
    def test_values_and_subgradient(self):
        np.testing.assert_array_equal(relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(relu_vjp([-1.0, 0.0, 2.0], [1.0, 1.0, 1.0]), [0.0, 1.0, 1.0])
