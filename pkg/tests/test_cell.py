import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homog.cell import CellOperator, build_modes, convolution_matrix
from homog.errors import SolvabilityViolation
from homog.lattice import constant_field, gradient_symbol, make_field, make_lattice

LAT1 = make_lattice([[2 * np.pi]])


def scalar_1d(coeffs, f=None, cutoff=16.0):
    return CellOperator(LAT1, gradient_symbol(1), make_field(coeffs, 1), f, cutoff)


def test_identity_coefficient_fiber_is_free():
    lat = make_lattice(2 * np.pi * np.eye(2))
    op = CellOperator(lat, gradient_symbol(2), constant_field(np.eye(2), 2), cutoff=4.0)
    k = np.array([0.13, -0.21])
    E = np.linalg.eigvalsh(op.fiber(k).matrix)
    ref = np.sort(np.sum((op.modes.vectors + k) ** 2, axis=1))
    assert np.allclose(E, ref, atol=1e-13)


def test_constant_coefficient_has_trivial_correctors():
    g = np.array([[2.0, 0.3], [0.3, 1.0]])
    lat = make_lattice(2 * np.pi * np.eye(2))
    cs = CellOperator(lat, gradient_symbol(2), constant_field(g, 2), cutoff=3.0).correctors()
    assert np.allclose(cs.g0, g)
    assert np.abs(cs.lam).max() < 1e-14


def test_convolution_matrix_hermitian():
    fld = make_field({(0,): 2.0, (1,): 0.5 + 0.2j, (-1,): 0.5 - 0.2j, (2,): 0.1j, (-2,): -0.1j}, 1)
    modes = build_modes(LAT1, 6.0)
    C = convolution_matrix(fld, modes).toarray()
    assert np.allclose(C, C.conj().T)


def test_1d_corrector_matches_quadrature():
    # D Lambda = g_lower / g - 1; Fourier coefficients of the right side by FFT
    op = scalar_1d({(0,): 2.0, (1,): 0.5, (-1,): 0.5}, cutoff=24.0)
    cs = op.correctors()
    M = 512
    x = 2 * np.pi * np.arange(M) / M
    rhs = np.sqrt(3) / (2 + np.cos(x)) - 1
    c = np.fft.fft(rhs) / M
    for j in range(1, 12):
        pos = op.modes.locate(np.array([[j]]))[0]
        assert cs.lam[pos, 0, 0] == pytest.approx(c[j] / j, abs=1e-13)
    assert abs(cs.lam[op.modes.zero]).max() == 0.0


def test_1d_second_corrector_relation():
    op = scalar_1d({(0,): 2.0, (1,): 0.5, (-1,): 0.5})
    cs = op.correctors()
    j = op.modes.indices[:, 0]
    nz = j != 0
    # D Lambda2 = -Lambda for scalar 1D coefficients
    assert np.allclose(j[nz] * cs.lam2[0, nz, 0, 0], -cs.lam[nz, 0, 0], atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.6), st.floats(-0.6, 0.6), st.floats(-0.3, 0.3))
def test_1d_effective_is_harmonic_mean(a, b, c):
    # g = 3.5 + 2a cos x + 2b sin x + 2c cos 2x stays >= 0.5
    coeffs = {(0,): 3.5, (1,): a - 1j * b, (-1,): a + 1j * b, (2,): c, (-2,): c}
    op = scalar_1d(coeffs, cutoff=40.0)
    cs = op.correctors()
    x = 2 * np.pi * np.arange(4096) / 4096
    g = 3.5 + 2 * a * np.cos(x) + 2 * b * np.sin(x) + 2 * c * np.cos(2 * x)
    assert cs.g0[0, 0].real == pytest.approx(1 / np.mean(1 / g), rel=1e-12)


def test_voigt_reuss_and_energy_identity():
    lat = make_lattice(2 * np.pi * np.eye(2))
    g = make_field({(0, 0): [[2.0, 0.0], [0.0, 1.5]], (1, 0): [[0.4, 0.1], [0.1, 0.0]],
                    (-1, 0): [[0.4, 0.1], [0.1, 0.0]], (0, 1): [[0.0, 0.0], [0.0, 0.3]],
                    (0, -1): [[0.0, 0.0], [0.0, 0.3]]}, 2)
    cs = CellOperator(lat, gradient_symbol(2), g, cutoff=10.0).correctors()
    assert min(cs.voigt_reuss) >= -1e-10
    assert cs.residuals["g_tilde_mean_vs_energy"] < 1e-12
    assert cs.residuals["g0_hermitian_defect"] < 1e-12


def test_solvability_violation():
    op = scalar_1d({(0,): 2.0, (1,): 0.5, (-1,): 0.5})
    rhs = np.zeros((len(op.modes), 1), complex)
    rhs[op.modes.zero] = 1.0
    with pytest.raises(SolvabilityViolation):
        op.solve_cell(rhs)


def test_weighted_mean_and_normalization():
    # f = 1.2 + 0.5 sin x: Q_bar = mean f^-2 = 1.2 / (1.44 - 0.25)^{3/2}
    f = make_field({(0,): 1.2, (1,): -0.25j, (-1,): 0.25j}, 1)
    op = scalar_1d({(0,): 2.0, (1,): 0.5, (-1,): 0.5}, f=f, cutoff=20.0)
    assert op.Q_bar[0, 0].real == pytest.approx(1.2 / 1.19 ** 1.5, rel=1e-12)
    assert op.f0[0, 0].real == pytest.approx((1.19 ** 1.5 / 1.2) ** 0.5, rel=1e-12)
    cs = op.correctors()
    assert cs.residuals["mean_Q_lam_Q"] < 1e-13


def test_sandwiched_fiber_is_bordered_hat_fiber():
    f = make_field({(0,): 1.2, (1,): -0.25j, (-1,): 0.25j}, 1)
    op = scalar_1d({(0,): 2.0, (1,): 0.5, (-1,): 0.5}, f=f)
    k = [0.2]
    F = op.F.toarray()
    hat = CellOperator(LAT1, gradient_symbol(1), op.g, cutoff=op.cutoff).fiber(k).matrix
    assert np.allclose(op.fiber(k).matrix, F.conj().T @ hat @ F)
