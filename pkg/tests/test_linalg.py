import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from collabandit.errors import DegenerateUpdate, DimensionMismatch
from collabandit.linalg import (
    InverseState,
    flatten_mat,
    kron_rows,
    kron_vec,
    pad_vector,
    quad_form,
    reshape_mat,
    self_outer,
    sm_update,
)
from oracles import gauss_jordan_inverse

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vectors(n_min=1, n_max=6):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(np.float64, n, elements=finite))


class TestShermanMorrison:
    def test_zero_update_leaves_identity(self):
        np.testing.assert_array_equal(sm_update(np.eye(2), [0, 0], [0, 0]), np.eye(2))

    def test_unit_update(self):
        np.testing.assert_allclose(sm_update(np.eye(2), [1, 0]), np.diag([0.5, 1.0]), atol=0, rtol=0)

    def test_input_not_mutated(self):
        inv = np.eye(3)
        sm_update(inv, [1, 2, 3])
        np.testing.assert_array_equal(inv, np.eye(3))

    def test_ten_updates_against_gauss_jordan(self):
        rng = np.random.default_rng(11)
        state = InverseState(5)
        acc = np.eye(5)
        for _ in range(10):
            x = rng.uniform(-1, 1, 5)
            state.update(x)
            acc += np.outer(x, x)
        oracle = np.array(gauss_jordan_inverse(acc.tolist()))
        assert np.max(np.abs(state.inv - oracle)) < 1e-10

    def test_asymmetric_update(self):
        rng = np.random.default_rng(3)
        a = np.eye(4) + 0.1 * rng.standard_normal((4, 4))
        u, v = rng.standard_normal(4), rng.standard_normal(4)
        got = sm_update(gauss_jordan_inverse(a.tolist()), u, v)
        want = gauss_jordan_inverse((a + np.outer(u, v)).tolist())
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_degenerate(self):
        # A = I, u = e1, v = -e1 makes A + u v^T singular
        state = InverseState(2)
        with pytest.raises(DegenerateUpdate):
            state.update([1, 0], [-1, 0])
        np.testing.assert_array_equal(state.inv, np.eye(2))

    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatch):
            InverseState(3).update([1, 2])
        with pytest.raises(DimensionMismatch):
            InverseState(2).update([1, 2], [1, 2, 3])
        with pytest.raises(DimensionMismatch):
            InverseState(2, inv=np.eye(3))

    def test_symmetry_after_many_updates(self):
        rng = np.random.default_rng(5)
        state = InverseState(8)
        for x in rng.uniform(-1, 1, (10_000, 8)):
            state.update(x)
        assert np.max(np.abs(state.inv - state.inv.T)) < 1e-12

    def test_product_with_accumulated_is_identity(self):
        rng = np.random.default_rng(8)
        state = InverseState(6)
        acc = np.eye(6)
        for x in rng.uniform(-1, 1, (500, 6)):
            state.update(x)
            acc += np.outer(x, x)
        np.testing.assert_allclose(state.inv @ acc, np.eye(6), atol=1e-8)

    def test_solve_and_copy(self):
        state = InverseState(2).update([1, 0])
        np.testing.assert_allclose(state.solve([1, 1]), [0.5, 1.0])
        clone = state.copy()
        clone.update([0, 1])
        assert state.inv[1, 1] == 1.0


class TestSmallOps:
    @pytest.mark.parametrize(
        "x, want",
        [((0, 0), [[0, 0], [0, 0]]), ((1, 0), [[1, 0], [0, 0]]), ((2, 3), [[4, 6], [6, 9]])],
    )
    def test_self_outer(self, x, want):
        np.testing.assert_array_equal(self_outer(x), want)

    def test_kron_examples(self):
        x = np.array([1.5, -2.0, 7.0])
        np.testing.assert_array_equal(kron_vec([1.0], x), x)
        np.testing.assert_allclose(kron_vec([0.25, 0.75], [2, 4]), [0.5, 1.0, 1.5, 3.0])

    def test_pad_examples(self):
        np.testing.assert_array_equal(pad_vector([1, 2], 0, 2), [1, 2, 0, 0])
        np.testing.assert_array_equal(pad_vector([1, 2], 1, 2), [0, 0, 1, 2])
        np.testing.assert_array_equal(pad_vector([4, 5, 6], 0, 1), [4, 5, 6])
        with pytest.raises(IndexError):
            pad_vector([1], 2, 2)

    def test_reshape_examples(self):
        m = reshape_mat([1, 2, 3, 4], 2, 2)
        np.testing.assert_array_equal(m[:, 0], [1, 2])
        np.testing.assert_array_equal(m[:, 1], [3, 4])
        x = np.arange(6.0)
        np.testing.assert_array_equal(reshape_mat(x, 6, 1)[:, 0], x)
        with pytest.raises(DimensionMismatch):
            reshape_mat(x, 4, 2)

    def test_quad_form_examples(self):
        assert quad_form(InverseState(2), [3, 4]) == 25.0
        assert quad_form(InverseState(2), [0, 0]) == 0.0
        assert quad_form(InverseState(2, np.diag([0.5, 1.0])), [1, 1]) == 1.5

    def test_quad_forms_matches_loop(self):
        rng = np.random.default_rng(0)
        state = InverseState(4)
        for x in rng.standard_normal((20, 4)):
            state.update(x)
        zs = rng.standard_normal((7, 4))
        np.testing.assert_allclose(state.quad_forms(zs), [state.quad_form(z) for z in zs])


class TestProperties:
    @given(vectors(), vectors())
    def test_kron_norm_multiplicative(self, w, x):
        got = np.linalg.norm(kron_vec(w, x))
        want = np.linalg.norm(w) * np.linalg.norm(x)
        assert abs(got - want) <= 1e-12 * max(1.0, want)

    @given(vectors(), st.integers(1, 6), st.data())
    def test_kron_basis_is_padding(self, x, m, data):
        i = data.draw(st.integers(0, m - 1))
        np.testing.assert_array_equal(kron_vec(np.eye(m)[i], x), pad_vector(x, i, m))

    @given(st.integers(1, 5), st.integers(1, 5), st.data())
    def test_reshape_roundtrip(self, r, c, data):
        x = data.draw(arrays(np.float64, r * c, elements=finite))
        np.testing.assert_array_equal(flatten_mat(reshape_mat(x, r, c)), x)

    @given(vectors(2, 2), arrays(np.float64, (3, 2), elements=finite))
    def test_kron_rows_matches_kron_vec(self, w, xs):
        rows = kron_rows(w, xs)
        for row, x in zip(rows, xs):
            np.testing.assert_array_equal(row, kron_vec(w, x))

    @settings(max_examples=50)
    @given(arrays(np.float64, (15, 3), elements=st.floats(-1, 1)), arrays(np.float64, 3, elements=finite))
    def test_quad_form_nonnegative(self, xs, z):
        state = InverseState(3)
        for x in xs:
            state.update(x)
        assert state.quad_form(z) >= -1e-12 * max(1.0, float(z @ z))
