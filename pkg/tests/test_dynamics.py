import csv
import io

import numpy as np
import pytest
from dataclasses import replace

from homog import dynamics as dyn
from homog.cell import CellOperator
from homog.errors import CoefficientZero
from homog.germ import Germ
from homog.lattice import constant_field, gradient_symbol, make_field, make_lattice
from homog.report import table_csv

LAT1 = make_lattice([[2 * np.pi]])


def test_free_bands_1d():
    op = CellOperator(LAT1, gradient_symbol(1), constant_field(1.0, 1), cutoff=5.0)
    k = 0.3
    got = dyn.bands(op, [k], 6)
    ref = np.sort((np.arange(-5, 6) + k) ** 2)[:6]
    assert np.allclose(got, ref, atol=1e-13)


def test_time_reversal_symmetry(built):
    _, op, _ = built("2d_real_scalar", 8.0)
    k = np.array([0.11, -0.07])
    assert np.allclose(dyn.bands(op, k, 4), dyn.bands(op, -k, 4), atol=1e-12)


def test_band_over_k2_tends_to_g0(built):
    _, op, _ = built("1d_scalar")
    k = 1e-2
    assert dyn.bands(op, [k], 1)[0] / k ** 2 == pytest.approx(np.sqrt(3), rel=1e-3)


def test_band_lower_bounds(built):
    _, op, _ = built("2d_complex_beta", 12.0)
    for k in ([0.01, 0.0], [0.2, 0.3], [0.0, 0.5]):
        b = dyn.band_bounds(op, k)
        assert b["lower_ok"] and b["gap_ok"]


def test_refined_eigenvalues_agree_with_eigh(built):
    _, op, _ = built("2d_real_scalar", 8.0)
    k = np.array([0.05, 0.02])
    w, _ = dyn.lowest_bands(op, k, 3)
    assert np.allclose(w, np.linalg.eigvalsh(op.fiber(k).matrix)[:3], rtol=1e-9)


@pytest.mark.parametrize("name,theta", [("1d_scalar", (1.0,)), ("sandwich_f", (-1.0,)),
                                        ("2d_complex_beta", (0.0, 1.0)),
                                        ("matrix_m_eq_n", (0.6, 0.8))])
def test_band_fit_matches_germ(built, name, theta):
    _, op, germ = built(name, None if name in ("1d_scalar", "sandwich_f") else 12.0)
    for f in dyn.fit_band_expansion(op, germ, np.array(theta)):
        # a vanishing mu is measured on the scale 1e-3 gamma
        g, m, n = f.rel_errors(floor=1e-3)
        assert g < 1e-8 and m < 1e-5 and n < 1e-4


def test_beta_mu_from_fit(built):
    sc, op, germ = built("2d_complex_beta")
    (f,) = dyn.fit_band_expansion(op, germ, np.array([0.0, 1.0]))
    alpha = sc.expect["alpha"]
    assert f.mu == pytest.approx(-alpha / np.pi, rel=1e-4)


def test_real_scalar_mu_vanishes(built):
    _, op, germ = built("2d_real_scalar", 12.0)
    (f,) = dyn.fit_band_expansion(op, germ, np.array([0.6, 0.8]))
    assert abs(f.mu) < 1e-6 * f.gamma


def test_smoothing_weights():
    op = CellOperator(LAT1, gradient_symbol(1), constant_field(1.0, 1), cutoff=4.0)
    w = dyn.smoothing_weights(op, [0.2], 0.1, 3.0)
    assert np.all((w > 0) & (w <= 1))
    assert w[op.modes.zero] == pytest.approx(0.1 ** 3 * (0.04 + 0.01) ** -1.5)
    # beyond t0 the zero-mode weight is at most (eps/t0)^s
    k = 2 * op.t0
    wz = dyn.smoothing_weights(op, [k], 0.05, 3.0)[op.modes.zero]
    assert wz <= (0.05 / op.t0) ** 3


def test_exp_error_trivial_cases(built):
    _, op, germ = built("1d_scalar")
    assert dyn.exp_error(op, germ.cs.g0, [0.1], 0.05, 0.0, 3.0) == 0.0
    flat = CellOperator(LAT1, gradient_symbol(1), constant_field(1.7, 1), cutoff=8.0)
    assert dyn.exp_error(flat, np.array([[1.7]]), [0.1], 0.05, 3.0, 3.0) < 1e-12


def test_exp_error_bounds_and_monotonicity(built):
    _, op, germ = built("sandwich_f")
    g0 = germ.cs.g0
    f_cond = op.f.sup_norm(256) * op.f.inverse_sup_norm(256)
    hat = CellOperator(op.lattice, op.symbol, op.g, cutoff=op.cutoff)
    for k in ([0.03], [0.3]):
        vals = [dyn.exp_error(hat, g0, k, 0.05, 7.0, s) for s in (1.0, 2.0, 3.0)]
        assert all(v <= 2 + 1e-12 for v in vals)
        assert vals[0] >= vals[1] >= vals[2]
        assert dyn.exp_error(op, g0, k, 0.05, 7.0, 1.0, "sandwich") <= 2 * f_cond


def test_unitarity_and_group_law(built):
    _, op, germ = built("2d_complex_beta", 8.0)
    p = dyn.FiberPropagator.build(op, germ.cs.g0, [0.04, 0.1])
    U1, U2 = p.propagator(3.0), p.propagator(5.0)
    assert np.linalg.norm(U1, 2) == pytest.approx(1.0, abs=1e-12)
    assert np.abs(U1 @ U2 - p.propagator(8.0)).max() < 1e-10


def test_matrix_free_norm_matches_dense(built):
    _, op, germ = built("2d_complex_beta", 8.0)
    fm = make_field({(0, 0): 1.2, (1, 0): 0.2, (-1, 0): 0.2, (0, 1): 0.1j, (0, -1): -0.1j}, 2)
    sop = CellOperator(op.lattice, op.symbol, op.g, fm, op.cutoff)
    for o, var in ((op, "hat"), (sop, "sandwich")):
        p = dyn.FiberPropagator.build(o, germ.cs.g0, [0.03, 0.05], var)
        D = p.difference(0.05, 10.0) * dyn.smoothing_weights(o, p.k, 0.05, 3.0)[None, :]
        assert dyn.spectral_norm(p.operator(0.05, 10.0, 3.0)) == pytest.approx(
            np.linalg.norm(D, 2), rel=1e-9)


def test_scan_records_and_csv(built):
    _, op, germ = built("1d_scalar")
    ts, th = dyn.polar_k_grid(op, 6)
    res = dyn.scan_errors(op, germ.cs.g0, [0.1, 0.05], [1.0, 10.0], [3.0, 2.0], ts, th)
    per_k = [r for r in res.records if not r.is_sup]
    assert len(per_k) == 6 * 2 * 2 * 2 * 2
    for r in res.sup_records():
        same = [q.value for q in per_k if (q.s, q.eps, q.tau) == (r.s, r.eps, r.tau)]
        assert r.value == max(same) and r.value >= 0
    # smoothing monotone in s
    by = {(q.s, q.eps, q.tau, q.t, q.theta_index): q.value for q in per_k}
    for (s, e, tau, t, j), v in by.items():
        if s == 3.0:
            assert v <= by[(2.0, e, tau, t, j)] + 1e-15
    text = table_csv(dyn.SCAN_COLUMNS, [r.row() for r in res.sup_records()])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["variant", "s", "eps", "tau", "t", "theta_index", "value",
                       "ratio_linear", "ratio_sqrt"]
    assert all(r[4] == "sup" and r[5] == "sup" for r in rows[1:])


def test_scan_thread_pool_matches_serial(built, monkeypatch):
    _, op, germ = built("1d_scalar")
    ts, th = dyn.polar_k_grid(op, 4)
    serial = dyn.scan_errors(op, germ.cs.g0, [0.1], [5.0], [3.0], ts, th)
    monkeypatch.setenv("HOMOG_NUM_THREADS", "3")
    pooled = dyn.scan_errors(op, germ.cs.g0, [0.1], [5.0], [3.0], ts, th)
    assert [r.value for r in serial.records] == [r.value for r in pooled.records]


def test_probe_coefficient_zero(built):
    _, op, germ = built("2d_real_scalar", 8.0)
    with pytest.raises(CoefficientZero):
        dyn.sharpness_probe_do(op, germ, 0.1, 10.0, "time")


def test_time_probe_in_zone(built):
    _, op, germ = built("2d_complex_beta", 16.0)
    p = dyn.sharpness_probe_do(op, germ, 1 / 80, 80.0, "time")
    assert p.inside_zone and p.modulus >= np.sqrt(2)
    assert p.coefficient == pytest.approx(0.012, rel=1e-9)


def test_smoothing_probe_scalings(built):
    # s = 1: value/eps grows like eps^{-1/2}; s = 2: value/eps grows like tau^{1/2}
    _, op, germ = built("1d_scalar")
    r1 = [dyn.sharpness_probe_do(op, germ, 0.004 / 2 ** i, 1.0, "smoothing_s2", s=1.0).ratio
          for i in range(3)]
    assert all(1.3 < b / a < 1.5 for a, b in zip(r1, r1[1:]))
    r2 = [dyn.sharpness_probe_do(op, germ, 0.004, tau, "smoothing_s2").ratio
          for tau in (1.0, 4.0, 16.0)]
    assert all(1.9 < b / a < 2.1 for a, b in zip(r2, r2[1:]))


def test_linear_bound_constant_1d(built):
    # C = sup_k value / ((1 + tau) eps) is stable within 20% across eps, and the value
    # at the single point k = 0.1 stays below C (1 + tau) eps
    _, op, germ = built("1d_scalar")
    ts, th = dyn.polar_k_grid(op, 24)
    eps_grid = (0.1, 0.05, 0.025)
    res = dyn.scan_errors(op, germ.cs.g0, eps_grid, [1.0], [3.0], ts, th)
    c = np.array([r.ratio_linear for r in res.sup_records()])
    c_hat = np.median(c)
    assert np.all(np.abs(c / c_hat - 1) <= 0.2)
    for eps in eps_grid:
        v = dyn.exp_error(op, germ.cs.g0, [0.1], eps, 1.0, 3.0)
        assert v <= c_hat * 2 * eps
