import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnkern.dof import (
    DoFReport,
    allocate,
    cho_factor_shifted,
    dof,
    dof_report,
    gram,
    sample_inputs,
)
from attnkern.errors import ArgumentError, NumericalError

from conftest import small_dump

# Per-layer maxima of a published 12-layer DoF table, used as an allocation fixture.
TABLE_MAXIMA = [150.0, 173.8, 24.5, 39.8, 31.6, 66.6, 107.4, 33.0, 24.9, 29.9, 43.2, 39.8]
# Computed with exact rationals and round-half-to-even (see allocation_oracle below).
TABLE_DIMS_C64 = [151, 175, 25, 40, 32, 67, 108, 33, 25, 30, 43, 40]
TABLE_T_INV_C64 = 1.0045781556572924


def allocation_oracle(values, C):
    vals = [Fraction(v) for v in values]
    t_inv = Fraction(C) / (sum(vals) / len(vals))
    out = []
    for v in vals:
        x = t_inv * v
        fl = math.floor(x)
        frac = x - fl
        r = fl + 1 if frac > Fraction(1, 2) or (frac == Fraction(1, 2) and fl % 2 == 1) else fl
        out.append(max(1, r))
    return out, t_inv


def eig_dof(g, lam):
    w = np.linalg.eigvalsh(0.5 * (g + g.T))
    return float(np.sum(w / (w + lam)))


def random_spd(rng, J):
    A = rng.standard_normal((J, J))
    return A @ A.T / J + 1e-3 * np.eye(J)


class TestGram:
    def test_two_points_d1(self):
        g = gram(np.array([[0.0], [1.0]])).values
        np.testing.assert_allclose(g, [[1.0, 1.0], [1.0, math.e]], rtol=1e-15)

    def test_mean_mode_divides_by_J(self, rng):
        x = rng.standard_normal((7, 3))
        np.testing.assert_allclose(gram(x, "mean").values, gram(x).values / 7, rtol=1e-15)

    def test_symmetric(self, rng):
        g = gram(rng.standard_normal((20, 5))).values
        assert np.array_equal(g, g.T)

    def test_bad_mode(self, rng):
        with pytest.raises(ArgumentError):
            gram(rng.standard_normal((3, 2)), "sum")


class TestDoF:
    @pytest.mark.parametrize("J,lam", [(1, 0.1), (16, 1.0), (128, 0.25)])
    def test_identity(self, J, lam):
        assert dof(np.eye(J), lam) == pytest.approx(J / (1 + lam), abs=1e-10)

    def test_rank_one(self, rng):
        J, c, lam = 64, 0.7, 0.3
        u = np.full(J, math.sqrt(c))
        assert dof(np.outer(u, u), lam) == pytest.approx(J * c / (J * c + lam), abs=1e-10)

    def test_matches_eigen_oracle(self, rng):
        for _ in range(5):
            g = random_spd(rng, 40)
            assert dof(g, 0.05) == pytest.approx(eig_dof(g, 0.05), abs=1e-10)

    def test_zero_matrix(self):
        assert dof(np.zeros((5, 5)), 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_in_lambda(self, rng):
        g = random_spd(rng, 30)
        vals = [dof(g, lam) for lam in (1e-3, 1e-2, 1e-1, 1.0, 10.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_lambda_must_be_positive(self):
        with pytest.raises(ArgumentError):
            dof(np.eye(3), 0.0)

    def test_indefinite_reports_pivot(self):
        g = np.diag([1.0, -5.0, 2.0])
        with pytest.raises(NumericalError) as info:
            cho_factor_shifted(g, 0.1)
        assert info.value.pivot < 0

    def test_non_finite(self):
        g = np.eye(3)
        g[0, 1] = g[1, 0] = np.nan
        with pytest.raises(NumericalError):
            dof(g, 0.1)


@settings(max_examples=25, deadline=None)
@given(J=st.integers(1, 30), lam=st.floats(1e-3, 10.0), seed=st.integers(0, 2**31 - 1))
def test_dof_bounds_property(J, lam, seed):
    g = random_spd(np.random.default_rng(seed), J)
    n = dof(g, lam)
    assert 0.0 <= n <= J
    assert n == pytest.approx(eig_dof(g, lam), abs=1e-9)


class TestReport:
    def test_shape_and_determinism(self, rng):
        dump = small_dump(rng)
        a = dof_report(dump, 0.1, J=20, seed=3)
        b = dof_report(dump, 0.1, J=20, seed=3, workers=1)
        assert a.table.shape == (2, 2)
        assert np.array_equal(a.table, b.table)
        assert np.array_equal(a.layer_max, a.table.max(axis=1))

    def test_default_J_caps_at_pool(self, rng):
        dump = small_dump(rng)
        assert dof_report(dump, 0.1).J == 2 * dump.T * dump.L

    def test_J_too_large(self, rng):
        dump = small_dump(rng)
        with pytest.raises(ArgumentError):
            dof_report(dump, 0.1, J=10_000)

    def test_sample_inputs_rows_come_from_head(self, rng):
        dump = small_dump(rng)
        x = sample_inputs(dump, 1, 0, 12, seed=0)
        q, k = dump.head(1, 0)
        pool = {tuple(r) for r in np.concatenate([q, k])}
        assert all(tuple(r) in pool for r in x)
        assert len({tuple(r) for r in x}) == 12


class TestAllocate:
    def test_equal_share(self):
        a = allocate([10.0, 30.0], 20)
        assert a.dims == [10, 30]
        assert a.t_inv == 1.0
        assert a.lam is None

    def test_table_maxima_frozen(self):
        a = allocate(TABLE_MAXIMA, 64)
        assert a.dims == TABLE_DIMS_C64
        assert a.t_inv == pytest.approx(TABLE_T_INV_C64, rel=1e-15)

    def test_table_maxima_matches_exact_oracle(self):
        dims, t_inv = allocation_oracle(TABLE_MAXIMA, 64)
        assert dims == TABLE_DIMS_C64
        assert float(t_inv) == TABLE_T_INV_C64

    def test_clip(self):
        a = allocate(TABLE_MAXIMA, 64, clip=64)
        assert a.dims == [64, 64, 25, 40, 32, 64, 64, 33, 25, 30, 43, 40]
        assert a.clip == 64

    def test_equal_dof_gets_budget(self):
        assert allocate([3.3] * 5, 64).dims == [64] * 5

    def test_minimum_one(self):
        assert allocate([1000.0, 0.01], 2).dims[1] == 1

    def test_round_half_even(self):
        # t_inv = 1 and values on exact half-integers
        assert allocate([2.5, 3.5, 2.0, 4.0], 3).dims == [2, 4, 2, 4]

    def test_from_report(self):
        rep = DoFReport(0.1, 8, 0, np.array([[1.0, 2.0], [4.0, 3.0]]))
        a = allocate(rep, 6)
        assert a.dims == [4, 8]
        assert a.lam == 0.1

    @pytest.mark.parametrize("bad", [dict(C=0), dict(C=5, clip=0)])
    def test_bad_budget(self, bad):
        with pytest.raises(ArgumentError):
            allocate([1.0, 2.0], **bad)

    def test_nonpositive_dof(self):
        with pytest.raises(ArgumentError):
            allocate([1.0, 0.0], 4)


@settings(max_examples=50, deadline=None)
@given(
    values=st.lists(st.floats(0.5, 500.0), min_size=1, max_size=24),
    C=st.integers(1, 256),
)
def test_allocation_property(values, C):
    a = allocate(values, C)
    dims, _ = allocation_oracle(values, C)
    assert a.dims == dims
    assert all(m >= 1 for m in a.dims)


class TestExamples:
    def test_full_pool_is_permutation(self, rng):
        dump = small_dump(rng, S=1, H=1)
        q, k = dump.head(0, 0)
        pool = np.concatenate([q, k])
        x = sample_inputs(dump, 0, 0, pool.shape[0], seed=1)
        assert sorted(map(tuple, x)) == sorted(map(tuple, pool))
        assert np.array_equal(x, sample_inputs(dump, 0, 0, pool.shape[0], seed=1))

    def test_64_of_2048(self, rng):
        dump = small_dump(rng, S=1, H=1, d=3, T=32, L=32)
        x = sample_inputs(dump, 0, 0, 64, seed=5)
        q, k = dump.head(0, 0)
        index = {tuple(r): i for i, r in enumerate(np.concatenate([q, k]))}
        picked = [index[tuple(r)] for r in x]
        assert len(set(picked)) == 64

    def test_zero_points_give_ones(self):
        assert np.array_equal(gram(np.zeros((4, 3))).values, np.ones((4, 4)))

    def test_diagonal(self, rng):
        x = rng.standard_normal((5, 4))
        np.testing.assert_allclose(np.diag(gram(x).values), np.exp(np.sum(x * x, axis=1) / 2.0), rtol=1e-14)

    def test_single_cell_table(self, rng):
        dump = small_dump(rng, S=1, H=1)
        rep = dof_report(dump, 0.2, J=20, seed=9)
        from attnkern._parallel import derive_seed
        x = sample_inputs(dump, 0, 0, 20, derive_seed(9, 0, 0))
        assert rep.table.shape == (1, 1)
        assert rep.table[0, 0] == dof(gram(x), 0.2)

    def test_orthogonal_unit_tokens(self):
        # rows are distinct basis vectors: diagonal e^{1/sqrt d}, off-diagonal 1
        d, T, L, lam = 16, 1, 8, 0.1
        eye = np.eye(d)
        from attnkern.toy import QKDump
        dump = QKDump(eye[None, None, :8], eye[None, None, 8:], T, L)
        got = dof_report(dump, lam, J=16).table[0, 0]
        a = math.exp(1 / math.sqrt(d))
        J = 16
        closed = (J - 1) * (a - 1) / (a - 1 + lam) + (a + J - 1) / (a + J - 1 + lam)
        assert got == pytest.approx(closed, rel=0.05)
        assert got == pytest.approx(closed, abs=1e-10)
