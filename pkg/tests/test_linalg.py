import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homog.errors import BranchTrackingFailure
from homog.linalg import group_sorted, hermitize, lstsq_poly, match_by_overlap, psd_sqrt


def test_hermitize_is_idempotent(rng):
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    h = hermitize(a)
    assert np.allclose(h, h.conj().T)
    assert np.allclose(hermitize(h), h)


def test_group_sorted_splits_on_gaps():
    groups = group_sorted(np.array([1.0, 1.0 + 1e-12, 2.0, 3.0, 3.0]), 1e-9)
    assert [g.tolist() for g in groups] == [[0, 1], [2], [3, 4]]
    assert group_sorted(np.array([]), 1.0) == []


def test_psd_sqrt_and_inverse(rng):
    b = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    a = b @ b.conj().T + np.eye(5)
    r = psd_sqrt(a)
    ri = psd_sqrt(a, inverse=True)
    assert np.allclose(r @ r, a)
    assert np.allclose(r @ ri, np.eye(5))


@settings(max_examples=40, deadline=None)
@given(st.permutations(list(range(5))), st.integers(0, 2 ** 31 - 1))
def test_overlap_matching_recovers_permutation(perm, seed):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((8, 5)))
    order, ov = match_by_overlap(q, q[:, perm])
    assert np.array_equal(np.asarray(perm)[order], np.arange(5))
    assert np.allclose(ov, 1.0)


def test_overlap_matching_rejects_weak_overlap():
    e = np.eye(4)
    new = 0.6 * e[:, :2] + 0.8 * e[:, 2:]
    with pytest.raises(BranchTrackingFailure):
        match_by_overlap(e[:, :2], new)


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_lstsq_poly_exact_on_polynomials(c):
    x = np.geomspace(1e-3, 0.2, 10)
    y = c[0] + c[1] * x + c[2] * x ** 2
    got, resid = lstsq_poly(x, y, 2)
    assert np.allclose(got, c, atol=1e-8)
    assert resid < 1e-10
