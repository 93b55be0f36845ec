import numpy as np
import pytest

from homog import pencil
from homog.errors import CoefficientZero, DegenerateGerm, DegenerateKernel, NoSpectralGap

# Lowest eigenvalue of (X0 + t X1)^T (X0 + t X1) for the 2x2 pencil below, expanded
# symbolically (closed-form 2x2 eigenvalue, series in t): t^2 - 12 t^3 + 29 t^4 + ...
X0_2 = np.array([[0.0, 0.0], [0.0, 1.0]])
X1_2 = np.array([[1.0, 2.0], [3.0, 0.5]])
SERIES_2 = (1.0, -12.0, 29.0)


@pytest.fixture(scope="module")
def fam2():
    return pencil.build_family(X0_2, X1_2)


def test_kernel_data(fam2):
    assert np.allclose(fam2.P, np.diag([1, 0]))
    assert np.allclose(fam2.Pstar, np.diag([1, 0]))
    assert fam2.d0 == pytest.approx(1.0)
    assert fam2.delta == pytest.approx(1 / 16)
    assert fam2.t0 == pytest.approx(0.25 / np.linalg.norm(X1_2, 2))


def test_threshold_set_against_symbolic_series(fam2):
    ts = pencil.compute_threshold_set(fam2)
    (b,) = ts.branches
    assert (b.gamma, b.mu, b.nu) == pytest.approx(SERIES_2, rel=1e-12)


def test_fit_against_symbolic_series(fam2):
    (f,) = pencil.fit_branch_expansion(fam2, np.geomspace(1e-3, 1e-2, 8) * fam2.t0)
    assert f.gamma == pytest.approx(SERIES_2[0], rel=1e-9)
    assert f.mu == pytest.approx(SERIES_2[1], rel=1e-6)
    assert f.nu == pytest.approx(SERIES_2[2], rel=1e-3)


def test_trivial_kernel_rejected():
    with pytest.raises(DegenerateKernel):
        pencil.build_family(np.eye(3), np.ones((3, 3)))


def test_no_spectral_gap():
    with pytest.raises(NoSpectralGap):
        pencil.build_family(np.diag([1.0, 1e-8, 0.0]), np.ones((3, 3)))


def test_degenerate_germ():
    # X1 maps the kernel into Ran X0 only, so S = 0
    X0 = np.diag([0.0, 1.0])
    X1 = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateGerm):
        pencil.compute_threshold_set(pencil.build_family(X0, X1))


def test_corrector_identities(rng):
    fam = pencil.random_family(rng, 2, 6, 7)
    c = pencil.compute_correctors(fam)
    # R lies in the orthogonal complement of Ran X0 and Z maps into Ran X0^*
    assert np.linalg.norm(fam.X0.conj().T @ c.R) < 1e-12
    assert np.linalg.norm(fam.P @ c.Z) < 1e-12
    assert c.residual < 1e-12


def test_random_family_is_seeded():
    a = pencil.random_family(np.random.default_rng(5), 2, 5, 6)
    b = pencil.random_family(np.random.default_rng(5), 2, 5, 6)
    assert np.array_equal(a.X0, b.X0) and np.array_equal(a.X1, b.X1)


@pytest.mark.parametrize("seed,n,with_m", [(1, 1, False), (2, 2, False), (3, 3, True),
                                           (4, 2, True)])
def test_random_fits_match_formulas(seed, n, with_m):
    rng = np.random.default_rng(seed)
    fam = pencil.random_family(rng, n, 7, 8, with_M=with_m)
    fits = pencil.fit_branch_expansion(fam, np.geomspace(1e-3, 1e-2, 8) * fam.t0)
    errs = np.array([f.rel_errors() for f in fits]).max(axis=0)
    assert errs[0] <= 1e-6 and errs[1] <= 1e-4 and errs[2] <= 1e-3


def test_threshold_remainders_bounded(rng):
    fam = pencil.random_family(rng, 2, 6, 6)
    rem = pencil.threshold_remainders(fam, np.geomspace(1e-3, 1e-1, 5) * fam.t0)
    for c in range(2):
        assert rem[:, c].max() / rem[:, c].min() < 2


def test_orthogonality_defect_small(rng):
    fam = pencil.random_family(rng, 2, 6, 7)
    assert pencil.orthogonality_defect(fam) < 1e-6


def test_sandwich_identities(rng):
    fam = pencil.random_family(rng, 2, 6, 7, with_M=True)
    rep = pencil.sandwich_check(fam)
    assert max(rep.residuals.values()) < 1e-10
    assert np.allclose(rep.gamma, rep.gamma_generalized)


def test_exp_error_bounded_and_zero_at_tau_zero(fam2):
    sup, prof = pencil.exp_error_abstract(fam2, 0.1, 5.0, 3.0, np.geomspace(1e-3, 1, 7))
    assert 0 < sup <= 2 + 1e-12
    zero, _ = pencil.exp_error_abstract(fam2, 0.1, 0.0, 3.0, [0.1])
    assert zero == 0.0


def test_time_probe(fam2):
    p = pencil.sharpness_probe_abstract(fam2, 0.05, 1.0, "time")
    assert p.coefficient == pytest.approx(-12.0)
    assert p.in_regime and p.modulus >= np.sqrt(2)
    with pytest.raises(CoefficientZero):
        pencil.sharpness_probe_abstract(fam2, 0.05, 1.0, "smoothing")


def test_time_probe_degenerate_cluster():
    # S = I on a two-dimensional kernel
    X0 = np.diag([0.0, 0.0, 1.0, 1.0])
    X1 = np.zeros((4, 4))
    X1[0, 0] = X1[1, 1] = 1.0
    X1[2, 0], X1[3, 1], X1[0, 2] = 0.7, -0.4, 0.5
    fam = pencil.build_family(X0, X1)
    p = pencil.sharpness_probe_abstract(fam, 0.05, 1.0, "time")
    assert p.modulus_ok
