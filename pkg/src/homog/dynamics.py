"""Band functions, band-expansion fits, smoothed exponential errors and probes."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, svds

from .cell import CellOperator, effective_blocks
from .errors import BranchTrackingFailure, CoefficientZero
from .germ import Germ, GermPack
from .lattice import sphere_grid
from .linalg import lstsq_poly, match_by_overlap

DENSE_NORM_MAX = 600


def bands(op: CellOperator, k, count: int, variant: str = "auto") -> np.ndarray:
    return sla.eigh(op.fiber(k, variant).matrix, eigvals_only=True,
                    subset_by_index=[0, count - 1])


def band_bounds(op: CellOperator, k, slack: float = 1e-8) -> dict:
    """Check E_j(k) >= c_* |k|^2 (j <= n) and E_{n+1}(k) >= c_* r0^2."""
    n = op.n
    E = bands(op, k, n + 1)
    k2 = float(np.dot(k, k))
    cs = op.c_star
    return {"lower_ok": bool(E[:n].min() >= cs * k2 * (1 - slack) - slack),
            "gap_ok": bool(E[n] >= cs * op.lattice.r0 ** 2 * (1 - slack)),
            "E": E, "c_star": cs}


# --- band fits -----------------------------------------------------------------------

@dataclass(frozen=True)
class BandFit:
    theta: np.ndarray
    branch: int
    gamma: float
    mu: float
    nu: float
    gamma_formula: float
    mu_formula: float
    nu_formula: float
    residuals: tuple

    def rel_errors(self, floor: float = 1e-6):
        """Relative deviations; coefficients below floor*gamma are compared absolutely
        against that floor."""
        f = floor * abs(self.gamma_formula)

        def rel(a, b):
            return abs(a - b) / max(abs(b), f)
        return (rel(self.gamma, self.gamma_formula), rel(self.mu, self.mu_formula),
                rel(self.nu, self.nu_formula))


def default_fit_grid(op: CellOperator, count: int = 12) -> np.ndarray:
    return np.geomspace(0.01, 0.3, count) * op.t0


def _limit_vectors(op: CellOperator, gp: GermPack) -> np.ndarray:
    """Kernel vectors of the k = 0 fiber that the branches start from."""
    K, n, z = len(op.modes), op.n, op.modes.zero
    E = np.zeros((K * n, n), complex)
    E[z * n:(z + 1) * n] = np.column_stack([b.zeta for b in gp.branches])
    if not op.hat:
        E = np.linalg.solve(op.F.toarray(), E)
    return E / np.linalg.norm(E, axis=0)


def lowest_bands(op: CellOperator, k, count: int):
    """Lowest eigenpairs with eigenvalues refined as Rayleigh quotients |L^* B F v|^2.

    The refinement keeps relative accuracy for eigenvalues far below |A(k)|,
    where plain eigh only gives absolute accuracy eps |A(k)|.
    """
    w, v = sla.eigh(op.fiber(k).matrix, subset_by_index=[0, count - 1])
    X = op.energy_columns(k, v)
    return np.sum(np.abs(X) ** 2, axis=0) / np.sum(np.abs(v) ** 2, axis=0), v


def track_bands(op: CellOperator, theta, t_grid, gp: GermPack):
    prev = _limit_vectors(op, gp)
    n = op.n
    out = []
    for t in t_grid:
        w, v = lowest_bands(op, t * np.asarray(theta, float), n)
        order, _ = match_by_overlap(prev, v)
        out.append(w[order])
        prev = v[:, order]
    return np.array(out)


def fit_band_expansion(op: CellOperator, germ: Germ, theta, t_grid=None,
                       branch: int | None = None, degree_tail: int = 3) -> list[BandFit]:
    """Fit E_l(t theta) = gamma t^2 + mu t^3 + nu t^4 + ... for the lowest n branches.

    gamma from a joint polynomial fit of E/t^2; mu after subtracting the formula
    gamma; nu after subtracting the formula gamma and mu, with ``degree_tail``
    extra powers of t in each fit.
    """
    theta = np.asarray(theta, float)
    t_grid = np.sort(np.asarray(default_fit_grid(op) if t_grid is None else t_grid, float))
    gp = germ.full_at(theta, "hat" if op.hat else "Q")
    lam = track_bands(op, theta, t_grid, gp)
    fits = []
    ls = range(op.n) if branch is None else [branch]
    for l in ls:
        br = gp.branches[l]
        y = lam[:, l]
        c2, r2 = lstsq_poly(t_grid, y / t_grid ** 2, 2 + degree_tail)
        c3, r3 = lstsq_poly(t_grid, (y - br.gamma * t_grid ** 2) / t_grid ** 3, 1 + degree_tail)
        c4, r4 = lstsq_poly(t_grid, (y - br.gamma * t_grid ** 2 - br.mu * t_grid ** 3)
                            / t_grid ** 4, degree_tail)
        fits.append(BandFit(theta, l, float(c2[0]), float(c3[0]), float(c4[0]),
                            br.gamma, br.mu, br.nu, (r2, r3, r4)))
    return fits


# --- exponential errors --------------------------------------------------------------

def smoothing_weights(op: CellOperator, k, eps: float, s: float) -> np.ndarray:
    q = np.sum((op.modes.vectors + np.asarray(k, float)) ** 2, axis=1)
    w = eps ** s * (q + eps ** 2) ** (-s / 2)
    return np.repeat(w, op.n)


@dataclass
class FiberPropagator:
    """Eigendecompositions of the fiber and effective fiber at one k, shared over (eps, tau, s)."""
    op: CellOperator
    k: np.ndarray
    variant: str
    w: np.ndarray
    V: np.ndarray
    w0: np.ndarray          # (K, n)
    V0: np.ndarray          # (K, n, n)

    @classmethod
    def build(cls, op: CellOperator, g0: np.ndarray, k, variant: str = "hat"):
        k = np.asarray(k, float).reshape(op.lattice.d)
        if variant == "hat":
            A = op.fiber(k, "hat").matrix
            blocks = effective_blocks(op.symbol, op.modes, k, g0)
        elif variant == "sandwich":
            A = op.fiber(k, "sandwiched").matrix
            blocks = op.f0 @ effective_blocks(op.symbol, op.modes, k, g0) @ op.f0
        else:
            raise ValueError(f"unknown variant {variant!r}")
        w, V = np.linalg.eigh(A)
        w0, V0 = np.linalg.eigh(0.5 * (blocks + np.conj(np.swapaxes(blocks, -1, -2))))
        return cls(op, k, variant, w, V, w0, V0)

    def propagator(self, phase: float) -> np.ndarray:
        return (self.V * np.exp(-1j * phase * self.w)) @ self.V.conj().T

    def effective_propagator_blocks(self, phase: float) -> np.ndarray:
        return (self.V0 * np.exp(-1j * phase * self.w0)[:, None, :]) @ \
            np.conj(np.swapaxes(self.V0, -1, -2))

    def difference(self, eps: float, tau: float) -> np.ndarray:
        """J (sandwich) or J-hat as a dense matrix."""
        op = self.op
        phase = tau / eps ** 2
        E1 = self.propagator(phase)
        E0b = self.effective_propagator_blocks(phase)
        if self.variant == "sandwich":
            E1 = (op.F @ E1) @ op.Finv
            f0, f0i = op.f0, np.linalg.inv(op.f0)
            E0b = f0 @ E0b @ f0i
        K, n = len(op.modes), op.n
        idx = np.arange(K)
        D = E1.reshape(K, n, K, n)
        D[idx, :, idx, :] -= E0b
        return D.reshape(K * n, K * n)

    def operator(self, eps: float, tau: float, s: float) -> LinearOperator:
        """Matrix-free (E1 - E0) R^{s/2}; E1, E0 the fiber and effective exponentials."""
        op, n = self.op, self.op.n
        K = len(op.modes)
        phase = tau / eps ** 2
        e = np.exp(-1j * phase * self.w)
        E0 = self.effective_propagator_blocks(phase)
        if self.variant == "sandwich":
            f0, f0i = op.f0, np.linalg.inv(op.f0)
            E0 = f0 @ E0 @ f0i
            F, Fi = op.F, op.Finv
            FH, FiH = F.conj().T.tocsr(), Fi.conj().T.tocsr()
        E0H = np.conj(np.swapaxes(E0, -1, -2))
        wt = smoothing_weights(op, self.k, eps, s)
        V, VH = self.V, self.V.conj().T

        def blocks(Eb, x):
            return np.einsum("kij,kj->ki", Eb, x.reshape(K, n)).reshape(-1)

        def mv(x):
            x = wt * np.ravel(x)
            y = Fi @ x if self.variant == "sandwich" else x
            y = V @ (e * (VH @ y))
            if self.variant == "sandwich":
                y = F @ y
            return y - blocks(E0, x)

        def rmv(y):
            y = np.ravel(y)
            z = FH @ y if self.variant == "sandwich" else y
            z = V @ (np.conj(e) * (VH @ z))
            if self.variant == "sandwich":
                z = FiH @ z
            return wt * (z - blocks(E0H, y))

        N = K * n
        return LinearOperator((N, N), matvec=mv, rmatvec=rmv,
                              matmat=lambda X: np.column_stack([mv(c) for c in X.T]),
                              dtype=complex)

    def value(self, eps: float, tau: float, s: float) -> float:
        if tau == 0:
            return 0.0
        if self.V.shape[0] <= DENSE_NORM_MAX:
            D = self.difference(eps, tau) * smoothing_weights(self.op, self.k, eps, s)[None, :]
            return float(np.linalg.norm(D, 2))
        return spectral_norm(self.operator(eps, tau, s))


def spectral_norm(D) -> float:
    """Largest singular value of a dense array or LinearOperator."""
    if isinstance(D, np.ndarray) and D.shape[0] <= DENSE_NORM_MAX:
        return float(np.linalg.norm(D, 2))
    return float(svds(D, k=1, return_singular_vectors=False, tol=1e-10, random_state=0)[0])


def exp_error(op: CellOperator, g0: np.ndarray, k, eps: float, tau: float, s: float,
              variant: str = "hat") -> float:
    """|| J(k, eps; tau) R(k, eps)^{s/2} || on the truncated fiber."""
    if tau == 0:
        return 0.0
    return FiberPropagator.build(op, g0, k, variant).value(eps, tau, s)


# --- scans ------------------------------------------------------------------------------

SCAN_COLUMNS = ["variant", "s", "eps", "tau", "t", "theta_index", "value",
                "ratio_linear", "ratio_sqrt"]


@dataclass(frozen=True)
class ScanRecord:
    variant: str
    s: float
    eps: float
    tau: float
    t: float | None          # None marks a sup record
    theta_index: int | None
    value: float

    @property
    def ratio_linear(self) -> float:
        return self.value / ((1 + abs(self.tau)) * self.eps)

    @property
    def ratio_sqrt(self) -> float:
        return self.value / ((1 + abs(self.tau) ** 0.5) * self.eps)

    @property
    def is_sup(self) -> bool:
        return self.t is None

    def row(self) -> list:
        t = "sup" if self.t is None else repr(float(self.t))
        th = "sup" if self.theta_index is None else str(self.theta_index)
        return [self.variant, repr(float(self.s)), repr(float(self.eps)), repr(float(self.tau)),
                t, th, repr(self.value), repr(self.ratio_linear), repr(self.ratio_sqrt)]


@dataclass(frozen=True)
class ScanResult:
    records: list
    sup: dict                # (s, eps, tau) -> (value, t, theta_index)

    def sup_records(self):
        return [r for r in self.records if r.is_sup]


def polar_k_grid(op: CellOperator, t_count: int = 24, thetas=None, theta_count: int | None = None):
    d = op.lattice.d
    if thetas is None:
        thetas = sphere_grid(d, theta_count or {1: 2, 2: 360, 3: 2000}.get(d, 500))
    ts = np.geomspace(1e-3 * op.lattice.r0, op.lattice.r0, t_count)
    return ts, np.asarray(thetas, float)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HOMOG_NUM_THREADS", "1")))
    except ValueError:
        return 1


def scan_errors(op: CellOperator, g0: np.ndarray, eps_grid, tau_grid, s_grid,
                t_grid, thetas, variant: str = "hat") -> ScanResult:
    """Evaluate the smoothed error on the polar k-grid for every (s, eps, tau)."""
    cells = [(i, t, j, th) for j, th in enumerate(thetas) for i, t in enumerate(t_grid)]

    def run(cell):
        _, t, j, th = cell
        prop = FiberPropagator.build(op, g0, t * th, variant)
        return [ScanRecord(variant, s, e, tau, float(t), j, prop.value(e, tau, s))
                for s in s_grid for e in eps_grid for tau in tau_grid]

    nw = _workers()
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            chunks = list(ex.map(run, cells))
    else:
        chunks = [run(c) for c in cells]
    records = [r for ch in chunks for r in ch]
    sup = {}
    for r in records:
        key = (r.s, r.eps, r.tau)
        if key not in sup or r.value > sup[key][0]:
            sup[key] = (r.value, r.t, r.theta_index)
    sups = [ScanRecord(variant, s, e, tau, None, None, v[0])
            for (s, e, tau), v in sorted(sup.items())]
    return ScanResult(records + sups, sup)


# --- sharpness probes -------------------------------------------------------------------

@dataclass(frozen=True)
class DOProbe:
    kind: str
    theta: np.ndarray
    coefficient: float
    eps: float
    tau: float
    s: float
    t: float
    value: float
    modulus: float
    lower_bound: float | None    # for value/eps
    inside_zone: bool

    @property
    def ratio(self) -> float:
        return self.value / self.eps


def probe_direction(germ: Germ, kind: str, thetas=None):
    """Direction and branch maximizing |mu| (time) or |nu| among mu = 0 branches (smoothing)."""
    op = germ.op
    variant = "hat" if op.hat else "Q"
    if thetas is None:
        thetas = sphere_grid(op.lattice.d, {1: 2, 2: 72, 3: 200}.get(op.lattice.d, 100))
    best = (0.0, None, None, None)
    for th in thetas:
        gp = germ.full_at(th, variant)
        scale = max(np.linalg.norm(gp.S_hat, 2), 1.0)
        for l, b in enumerate(gp.branches):
            if kind == "time":
                c = b.mu
            elif abs(b.mu) <= 1e-9 * scale:
                c = b.nu
            else:
                continue
            if abs(c) > abs(best[0]) * (1 + 1e-12) and abs(c) > 1e-9 * scale:
                best = (c, np.asarray(th, float), l, gp)
    if best[1] is None:
        raise CoefficientZero(f"no direction with a nonzero coefficient for the {kind} probe")
    return best


def sharpness_probe_do(op: CellOperator, germ: Germ, eps: float, tau: float, kind: str,
                       s: float | None = None, thetas=None) -> DOProbe:
    """Smoothed error at the probe quasimomentum of the sharpness proofs.

    time:        t = (2 pi/3)^{1/3} |mu tau|^{-1/3} eps^{2/3}, default s = 3
    smoothing_s2: t = pi^{1/4} |nu tau|^{-1/4} eps^{1/2},  default s = 2
    """
    if kind not in ("time", "smoothing_s2"):
        raise ValueError(f"unknown probe kind {kind!r}")
    coef, theta, l, gp = probe_direction(germ, "time" if kind == "time" else "smoothing", thetas)
    if kind == "time":
        s = 3.0 if s is None else s
        t = (2 * np.pi / 3) ** (1 / 3) * abs(coef * tau) ** (-1 / 3) * eps ** (2 / 3)
        bound = np.sqrt(2) / 3 * abs(tau) / (2 * np.pi / (3 * abs(coef)) + eps * abs(tau))
    else:
        s = 2.0 if s is None else s
        t = np.pi ** 0.25 * abs(coef * tau) ** (-0.25) * eps ** 0.5
        bound = None
    variant = "hat" if op.hat else "sandwich"
    k = t * theta
    prop = FiberPropagator.build(op, germ.cs.g0, k, variant)
    value = prop.value(eps, tau, s)
    try:
        E = track_bands(op, theta, np.geomspace(min(t, 1e-2 * op.t0), t, 10), gp)[-1, l]
        modulus = abs(2 * np.sin(0.5 * tau / eps ** 2 * (E - gp.branches[l].gamma * t * t)))
    except BranchTrackingFailure:
        # the probe point lies past a band crossing; the phase modulus is undefined there
        modulus = float("nan")
    return DOProbe(kind, theta, float(coef), eps, tau, s, float(t), float(value),
                   float(modulus), None if bound is None else float(bound),
                   bool(t <= op.lattice.r0))
