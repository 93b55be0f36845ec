"""Finite-dimensional factorized pencils A(t) = X(t)^* X(t), X(t) = X0 + t X1.

Everything the threshold theory attaches to such a family (kernel projectors,
germ S, correctors Z, Z2, the operators N and the fourth-order blocks) is
computed here by dense linear algebra.  The branch fits use mpmath so that
the t^4 coefficients can be resolved at small t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
import scipy.linalg as sla

from .errors import (CoefficientZero, DegenerateGerm, DegenerateKernel,
                     IdentityViolation, NoSpectralGap, SolveFailure)
from .linalg import (CLUSTER_RTOL, SUBCLUSTER_RTOL, group_sorted, hermitize,
                     lstsq_poly, match_by_overlap, psd_sqrt)

KERNEL_RTOL = 1e-10
GAP_RTOL = 1e-6
MP_DPS = 40


@dataclass(frozen=True)
class PencilFamily:
    X0: np.ndarray
    X1: np.ndarray
    M: np.ndarray | None
    W: np.ndarray          # orthonormal basis of Ker X0, columns
    Wstar: np.ndarray      # orthonormal basis of Ker X0^*
    pinv0: np.ndarray      # Moore-Penrose inverse of X0
    d0: float
    delta: float
    t0: float
    factors: tuple = field(repr=False, default=())   # (U_r diag(s_r), V_r^*) of X0

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def n_star(self) -> int:
        return self.Wstar.shape[1]

    @property
    def dim(self) -> int:
        return self.X0.shape[1]

    @property
    def P(self) -> np.ndarray:
        return self.W @ self.W.conj().T

    @property
    def Pstar(self) -> np.ndarray:
        return self.Wstar @ self.Wstar.conj().T

    def X(self, t: float) -> np.ndarray:
        return self.X0 + t * self.X1

    def A(self, t: float) -> np.ndarray:
        X = self.X(t)
        return X.conj().T @ X


def build_family(X0, X1, M=None) -> PencilFamily:
    """Validate a pencil and compute its kernel data, d0, delta = d0/16 and t0."""
    X0 = np.asarray(X0, dtype=complex)
    X1 = np.asarray(X1, dtype=complex)
    if X0.shape != X1.shape:
        raise ValueError("X0 and X1 must have the same shape")
    if M is not None:
        M = np.asarray(M, dtype=complex)
        if M.shape != (X0.shape[1],) * 2 or np.linalg.cond(M) > 1e12:
            raise ValueError("M must be an invertible square matrix")
    U, sv, Vh = np.linalg.svd(X0)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > KERNEL_RTOL * smax)) if smax > 0 else 0
    if rank == X0.shape[1]:
        raise DegenerateKernel("Ker X0 is trivial")
    if np.any((sv > KERNEL_RTOL * smax) & (sv < GAP_RTOL * smax)):
        raise NoSpectralGap("singular values of X0 accumulate near zero")
    if rank == 0:
        raise NoSpectralGap("X0 vanishes; no isolated point 0 in the spectrum")
    W = Vh[rank:].conj().T
    Wstar = U[:, rank:]
    pinv0 = (Vh[:rank].conj().T / sv[:rank]) @ U[:, :rank].conj().T
    d0 = float(sv[rank - 1] ** 2)
    delta = d0 / 16
    nx1 = float(np.linalg.norm(X1, 2))
    t0 = float(np.sqrt(delta) / nx1) if nx1 > 0 else np.inf
    factors = (U[:, :rank] * sv[:rank], Vh[:rank])
    return PencilFamily(X0, X1, M, W, Wstar, pinv0, d0, delta, t0, factors)


@dataclass(frozen=True)
class Correctors:
    Z: np.ndarray
    R: np.ndarray
    Z2: np.ndarray
    R2: np.ndarray
    residual: float
    solvability: float


def compute_correctors(fam: PencilFamily, tol: float = 1e-10) -> Correctors:
    """Z, R = X0 Z + X1 (on Ker X0), Z2 and R2 = X0 Z2 + X1 Z as full matrices."""
    X0, X1, P = fam.X0, fam.X1, fam.P
    Z = -fam.pinv0 @ X1 @ P
    R = X0 @ Z + X1 @ P
    scale = max(np.linalg.norm(X0, 2) ** 2, 1.0) * max(np.linalg.norm(X1, 2), 1.0)
    res = np.linalg.norm(X0.conj().T @ (X0 @ Z + X1 @ P), 2) / scale
    Pperp = np.eye(fam.dim) - P
    rhs = -(X0.conj().T @ X1 @ Z) - Pperp @ X1.conj().T @ R
    solv = np.linalg.norm(P @ rhs, 2) / max(np.linalg.norm(rhs, 2), scale)
    if solv > tol:
        raise SolveFailure(f"right side of the Z2 equation leaves Ran X0*: {solv:.2e}")
    G = fam.pinv0 @ fam.pinv0.conj().T      # pseudoinverse of X0^* X0
    Z2 = G @ rhs
    res2 = np.linalg.norm(X0.conj().T @ X0 @ Z2 - rhs, 2) / max(np.linalg.norm(rhs, 2), scale)
    res = max(res, res2)
    if res > tol:
        raise SolveFailure(f"corrector residual {res:.2e}")
    R2 = X0 @ Z2 + X1 @ Z
    return Correctors(Z, R, Z2, R2, float(res), float(solv))


@dataclass(frozen=True)
class Cluster:
    gamma: float
    basis: np.ndarray      # n x k, orthonormal, kernel coordinates

    @property
    def multiplicity(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T


@dataclass(frozen=True)
class Branch:
    gamma: float
    mu: float
    nu: float
    omega: np.ndarray      # kernel coordinates
    cluster: int


@dataclass(frozen=True)
class ThresholdSet:
    S: np.ndarray
    N: np.ndarray
    N0: np.ndarray
    Nstar: np.ndarray
    N1: np.ndarray
    ZZ: np.ndarray
    K: np.ndarray          # full matrix, t^3 coefficient of A(t)F(t)
    clusters: list[Cluster]
    nu_blocks: dict       # (q', q) -> Hermitian block on the subcluster
    branches: list[Branch]
    c_star: float
    corr: Correctors = field(repr=False)

    def c_circ(self, j: int, l: int) -> float:
        n = self.S.shape[0]
        return min(self.c_star, abs(self.clusters[l].gamma - self.clusters[j].gamma) / n)


def split_clusters(S: np.ndarray, rtol: float = CLUSTER_RTOL):
    g, v = np.linalg.eigh(hermitize(S))
    scale = max(abs(g).max(), np.finfo(float).tiny)
    return [Cluster(float(g[idx].mean()), v[:, idx]) for idx in group_sorted(g, rtol * scale)]


def cluster_split(N: np.ndarray, clusters: list[Cluster]):
    N0 = sum(c.projector @ N @ c.projector for c in clusters)
    return N0, N - N0


def resolve_branches(S, N, N1, ZZ, clusters, mu_scale: float):
    """Eigen-resolve N inside germ clusters and the fourth-order blocks inside subclusters.

    Returns (branches, nu_blocks).  Branches come out in the order their
    eigenvalues take for small t > 0.
    """
    branches, blocks = [], {}
    for q, cl in enumerate(clusters):
        B = cl.basis
        mu, mv = np.linalg.eigh(hermitize(B.conj().T @ N @ B))
        res = N1 - 0.5 * (ZZ @ S + S @ ZZ)
        for j, other in enumerate(clusters):
            if j != q:
                res = res + (N @ other.projector @ N) / (cl.gamma - other.gamma)
        for qq, idx in enumerate(group_sorted(mu, SUBCLUSTER_RTOL * mu_scale)):
            sub = B @ mv[:, idx]
            blk = hermitize(sub.conj().T @ res @ sub)
            blocks[(qq, q)] = blk
            nu, nv = np.linalg.eigh(blk)
            for a in range(nu.size):
                branches.append(Branch(cl.gamma, float(mu[idx].mean()), float(nu[a]),
                                       sub @ nv[:, a], q))
    return branches, blocks


def compute_threshold_set(fam: PencilFamily, corr: Correctors | None = None) -> ThresholdSet:
    corr = corr or compute_correctors(fam)
    W, X1 = fam.W, fam.X1
    Z, R, Z2, R2 = corr.Z, corr.R, corr.Z2, corr.R2
    S = hermitize(W.conj().T @ R.conj().T @ R @ W)
    g = np.linalg.eigvalsh(S)
    if g[0] <= 1e-12 * max(g[-1], 1e-300):
        raise DegenerateGerm(f"germ has eigenvalue {g[0]:.3e}")
    Nf = Z.conj().T @ X1.conj().T @ R + R.conj().T @ X1 @ Z
    N1f = Z2.conj().T @ X1.conj().T @ R + R.conj().T @ X1 @ Z2 + R2.conj().T @ R2
    N = hermitize(W.conj().T @ Nf @ W)
    N1 = hermitize(W.conj().T @ N1f @ W)
    ZZ = hermitize(W.conj().T @ Z.conj().T @ Z @ W)
    Sf = W @ S @ W.conj().T
    K = Z @ Sf + Sf @ Z.conj().T + Nf
    clusters = split_clusters(S)
    N0, Nstar = cluster_split(N, clusters)
    mu_scale = max(np.linalg.norm(N, 2), np.linalg.norm(S, 2))
    branches, blocks = resolve_branches(S, N, N1, ZZ, clusters, mu_scale)
    return ThresholdSet(S, N, N0, Nstar, N1, ZZ, K, clusters, blocks, branches,
                        float(g[0]), corr)


# --- high-precision branches -------------------------------------------------

def _mp_matrix(a: np.ndarray) -> mp.matrix:
    return mp.matrix([[mp.mpc(complex(x)) for x in row] for row in a])


def _mp_to_np(m: mp.matrix) -> np.ndarray:
    return np.array([[complex(m[i, j]) for j in range(m.cols)] for i in range(m.rows)])


def mp_eigh(fam: PencilFamily, t: float, dps: int = MP_DPS):
    """Eigenvalues (mpf, ascending) and eigenvectors (mp.matrix) of A(t)."""
    with mp.workdps(dps):
        # X0 rebuilt from its truncated SVD so that its kernel is exact at this precision
        X0 = _mp_matrix(fam.factors[0]) * _mp_matrix(fam.factors[1])
        X = X0 + mp.mpf(t) * _mp_matrix(fam.X1)
        E, Q = mp.eighe(X.H * X)
        order = sorted(range(len(E)), key=lambda i: E[i])
        return [E[i] for i in order], _columns(Q, order)


def _columns(Q: mp.matrix, order) -> mp.matrix:
    out = mp.matrix(Q.rows, len(order))
    for c, i in enumerate(order):
        for r in range(Q.rows):
            out[r, c] = Q[r, i]
    return out


@dataclass(frozen=True)
class BranchFit:
    gamma: float
    mu: float
    nu: float
    gamma_formula: float
    mu_formula: float
    nu_formula: float
    residuals: tuple

    def rel_errors(self) -> tuple[float, float, float]:
        def rel(a, b):
            return abs(a - b) / max(abs(b), 1e-300)
        return (rel(self.gamma, self.gamma_formula), rel(self.mu, self.mu_formula),
                rel(self.nu, self.nu_formula))


def track_lowest(fam: PencilFamily, ts: ThresholdSet, t_grid, dps: int = MP_DPS):
    """Lowest n eigenvalue branches of A(t) on an increasing grid, matched to the
    predicted limit vectors by overlap and then continued by overlap."""
    n = fam.n
    prev = fam.W @ np.column_stack([b.omega for b in ts.branches])
    values = []
    for t in t_grid:
        E, Q = mp_eigh(fam, t, dps)
        V = _mp_to_np(Q)[:, :n]
        order, _ = match_by_overlap(prev, V)
        values.append([E[i] for i in order])
        prev = V[:, order]
    return values


def fit_branch_expansion(fam: PencilFamily, t_grid, ts: ThresholdSet | None = None,
                         dps: int = MP_DPS) -> list[BranchFit]:
    """Fit lambda_l(t) = gamma t^2 + mu t^3 + nu t^4 + ... on the given grid.

    gamma comes from a joint fit; mu is fitted after subtracting the formula
    gamma; nu after subtracting the formula gamma and mu (basis t^4, t^5).
    """
    ts = ts or compute_threshold_set(fam)
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    vals = track_lowest(fam, ts, t_grid, dps)
    fits = []
    with mp.workdps(dps):
        for l, br in enumerate(ts.branches):
            lam = [v[l] for v in vals]
            tm = [mp.mpf(t) for t in t_grid]
            y2 = np.array([float(lam[i] / tm[i] ** 2) for i in range(len(tm))])
            y3 = np.array([float((lam[i] - br.gamma * tm[i] ** 2) / tm[i] ** 3)
                           for i in range(len(tm))])
            y4 = np.array([float((lam[i] - br.gamma * tm[i] ** 2 - br.mu * tm[i] ** 3)
                                 / tm[i] ** 4) for i in range(len(tm))])
            c2, r2 = lstsq_poly(t_grid, y2, 3)
            c3, r3 = lstsq_poly(t_grid, y3, 2)
            c4, r4 = lstsq_poly(t_grid, y4, 1)
            fits.append(BranchFit(float(c2[0]), float(c3[0]), float(c4[0]),
                                  br.gamma, br.mu, br.nu, (r2, r3, r4)))
    return fits


def threshold_remainders(fam: PencilFamily, t_grid, ts: ThresholdSet | None = None,
                         dps: int = MP_DPS):
    """Per t: ||F(t) - P|| / t and ||A(t)F(t) - t^2 SP - t^3 K|| / t^4."""
    ts = ts or compute_threshold_set(fam)
    n = fam.n
    Sf = fam.W @ ts.S @ fam.W.conj().T
    out = []
    with mp.workdps(dps):
        P = _mp_matrix(fam.P)
        Sm = _mp_matrix(Sf)
        Km = _mp_matrix(ts.K)
        for t in t_grid:
            E, Q = mp_eigh(fam, t, dps)
            tm = mp.mpf(t)
            F = mp.matrix(fam.dim, fam.dim)
            AF = mp.matrix(fam.dim, fam.dim)
            for c in range(n):
                v = Q[:, c]
                F += v * v.H
                AF += E[c] * (v * v.H)
            d1 = _mp_to_np(F - P)
            d2 = _mp_to_np(AF - tm ** 2 * Sm - tm ** 3 * Km)
            out.append((np.linalg.norm(d1, 2) / t, np.linalg.norm(d2, 2) / t ** 4))
    return np.array(out)


def orthogonality_defect(fam: PencilFamily, ts: ThresholdSet | None = None,
                         h: float = 1e-9, dps: int = MP_DPS) -> float:
    """max |(w~_j, w_k) + (w_j, w~_k)| with w~_j the kernel part of the first
    eigenvector correction, estimated by a central difference."""
    ts = ts or compute_threshold_set(fam)
    omega = fam.W @ np.column_stack([b.omega for b in ts.branches])
    derivs = []
    for sign in (1, -1):
        E, Q = mp_eigh(fam, sign * h, dps)
        with mp.workdps(dps):
            V = _mp_to_np(Q)[:, :fam.n]
            order, _ = match_by_overlap(omega, V)
            cols = []
            for a, i in enumerate(order):
                v = Q[:, int(i)]
                ov = sum(mp.conj(mp.mpc(complex(omega[r, a]))) * v[r] for r in range(fam.dim))
                v = v * (abs(ov) / ov)
                cols.append(v)
            derivs.append(cols)
    with mp.workdps(dps):
        P = _mp_matrix(fam.P)
        tilde = []
        for a in range(fam.n):
            dv = (derivs[0][a] - derivs[1][a]) / (2 * mp.mpf(h))
            tilde.append(np.array([complex(x) for x in (P * dv)]))
    T = np.column_stack(tilde)
    G = T.conj().T @ omega + omega.conj().T @ T
    return float(np.abs(G).max())


# --- exponentials and probes ---------------------------------------------------

def _expm_herm(A: np.ndarray, phase: float) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(A))
    return (v * np.exp(-1j * phase * w)) @ v.conj().T


def exp_error_abstract(fam: PencilFamily, eps: float, tau: float, s: float, t_grid,
                       ts: ThresholdSet | None = None):
    """Sup over the grid of ||(e^{-i tau eps^-2 A(t)} - e^{-i tau eps^-2 t^2 SP}) P||
    times eps^s (t^2+eps^2)^{-s/2}; also returns the per-t profile."""
    if tau == 0:
        prof = np.zeros(len(t_grid))
        return 0.0, prof
    ts = ts or compute_threshold_set(fam)
    phase = tau / eps ** 2
    W = fam.W
    prof = []
    for t in t_grid:
        U = _expm_herm(fam.A(t), phase) @ W
        U0 = W @ _expm_herm(t * t * ts.S, phase)
        w = eps ** s * (t * t + eps * eps) ** (-s / 2)
        prof.append(np.linalg.norm(U - U0, 2) * w)
    prof = np.array(prof)
    return float(prof.max()), prof


@dataclass(frozen=True)
class ProbeRecord:
    kind: str
    branch: int
    coefficient: float
    eps: float
    tau: float
    s: float
    t: float
    modulus: float
    value: float
    in_regime: bool
    modulus_ok: bool

    @property
    def ratio(self) -> float:
        return self.value / self.eps


def _branch_value(fam: PencilFamily, ts: ThresholdSet, j: int, t: float) -> float:
    """lambda_j(t) continued from small t by overlap tracking in double precision."""
    t_start = min(t, 1e-3 * fam.t0)
    grid = np.geomspace(t_start, t, 40) if t > t_start else [t]
    prev = fam.W @ np.column_stack([b.omega for b in ts.branches])
    lam = None
    for tt in grid:
        w, v = np.linalg.eigh(fam.A(tt))
        order, _ = match_by_overlap(prev, v[:, :fam.n])
        prev = v[:, order]
        lam = w[order]
    return float(lam[j])


def sharpness_probe_abstract(fam: PencilFamily, eps: float, tau: float, kind: str,
                             s: float | None = None,
                             ts: ThresholdSet | None = None) -> ProbeRecord:
    """Evaluate the phase mismatch at the probe point used in the sharpness proofs.

    kind='time': t = (2 pi/3)^{1/3} |mu tau|^{-1/3} eps^{2/3} on the branch with
    the largest |mu|.  kind='smoothing': t = pi^{1/4} |nu tau|^{-1/4} eps^{1/2}
    on a branch with mu = 0 and the largest |nu|.
    """
    ts = ts or compute_threshold_set(fam)
    scale = max(np.linalg.norm(ts.N, 2), np.linalg.norm(ts.S, 2))
    mus = np.array([b.mu for b in ts.branches])
    nus = np.array([b.nu for b in ts.branches])
    if kind == "time":
        s = 3.0 if s is None else s
        j = int(np.argmax(np.abs(mus)))
        coef = mus[j]
        if abs(coef) <= 1e-9 * scale:
            raise CoefficientZero("all mu vanish")
        t = (2 * np.pi / 3) ** (1 / 3) * abs(coef * tau) ** (-1 / 3) * eps ** (2 / 3)
    elif kind == "smoothing":
        s = 2.0 if s is None else s
        flat = np.abs(mus) <= 1e-9 * scale
        cand = np.where(flat, np.abs(nus), -1.0)
        j = int(np.argmax(cand))
        coef = nus[j]
        if cand[j] <= 1e-9 * scale:
            raise CoefficientZero("no branch with mu = 0 and nu != 0")
        t = np.pi ** 0.25 * abs(coef * tau) ** (-0.25) * eps ** 0.5
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    br = ts.branches[j]
    lam = _branch_value(fam, ts, j, t)
    mism = lam - br.gamma * t * t
    modulus = abs(2 * np.sin(0.5 * tau / eps ** 2 * mism))
    lead = coef * t ** 3 if kind == "time" else coef * t ** 4
    in_regime = abs(mism - lead) <= 0.25 * abs(lead)
    value = exp_error_abstract(fam, eps, tau, s, [t], ts)[0]
    return ProbeRecord(kind, j, float(coef), eps, tau, s, float(t), float(modulus),
                       float(value), bool(in_regime),
                       bool(modulus >= np.sqrt(2) - 1e-12 or not in_regime))


# --- sandwiched families -----------------------------------------------------

@dataclass(frozen=True)
class SandwichReport:
    residuals: dict
    gamma: np.ndarray
    gamma_generalized: np.ndarray
    M0: np.ndarray
    Q_N: np.ndarray


def sandwich_check(fam: PencilFamily, tol: float = 1e-10) -> SandwichReport:
    """Verify the identities linking A(t) = M^* Ahat(t) M with the hat family."""
    if fam.M is None:
        raise ValueError("family has no M")
    M = fam.M
    Minv = np.linalg.inv(M)
    hat = build_family(fam.X0 @ Minv, fam.X1 @ Minv)
    ts = compute_threshold_set(fam)
    hts = compute_threshold_set(hat)
    Q = np.linalg.inv(M @ M.conj().T)
    Wh = hat.W
    Ph = hat.P
    QN = hermitize(Wh.conj().T @ Q @ Wh)
    QNinv_full = Wh @ np.linalg.inv(QN) @ Wh.conj().T

    Shat_full = Wh @ hts.S @ Wh.conj().T
    S_full = fam.W @ ts.S @ fam.W.conj().T
    S_from_hat = fam.P @ M.conj().T @ Shat_full @ M @ fam.P

    # Q-normalized corrector of the hat family: Q Zhat_Q w is orthogonal to Ker.
    Zh = hts.corr.Z
    ZQ = Zh - QNinv_full @ Ph @ Q @ Zh
    Rh = hts.corr.R
    NQ = ZQ.conj().T @ hat.X1.conj().T @ Rh + Rh.conj().T @ hat.X1 @ ZQ
    Nfull = ts.corr.Z.conj().T @ fam.X1.conj().T @ ts.corr.R
    Nfull = Nfull + Nfull.conj().T
    MinvH = np.linalg.inv(M.conj().T)
    P_from_hat = Minv @ QNinv_full @ MinvH

    def rel(a, b):
        return float(np.linalg.norm(a - b, 2) / max(1.0, np.linalg.norm(b, 2)))

    gamma = np.linalg.eigvalsh(ts.S)
    gamma_gen = sla.eigh(hts.S, QN, eigvals_only=True)
    residuals = {
        "S = P M* Shat M": rel(S_from_hat, S_full),
        "NQ = Phat M*^-1 N M^-1 Phat": rel(NQ, Ph @ MinvH @ Nfull @ Minv @ Ph),
        "ZQ = M Z M^-1 Phat": rel(ZQ, M @ ts.corr.Z @ Minv @ Ph),
        "P = M^-1 QN^-1 Phat M*^-1": rel(P_from_hat, fam.P),
        "generalized germ spectrum": float(np.abs(gamma - gamma_gen).max()
                                           / max(1.0, np.abs(gamma).max())),
    }
    for name, r in residuals.items():
        if r > tol:
            raise IdentityViolation(f"{name}: residual {r:.2e}")
    return SandwichReport(residuals, gamma, gamma_gen, psd_sqrt(QN, inverse=True), QN)


# --- random families ---------------------------------------------------------

def random_family(rng: np.random.Generator, n: int, dim: int, dim_star: int,
                  with_M: bool = False, min_rel_germ: float = 0.05,
                  max_tries: int = 200) -> PencilFamily:
    """Complex Gaussian pencil with an n-dimensional kernel imposed by projection.

    Redrawn until the germ satisfies min eig S > min_rel_germ * ||S||.
    """
    def cgauss(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    for _ in range(max_tries):
        V, _ = np.linalg.qr(cgauss(dim, n))
        X0 = cgauss(dim_star, dim) @ (np.eye(dim) - V @ V.conj().T)
        X1 = cgauss(dim_star, dim)
        M = cgauss(dim, dim) + 2 * np.eye(dim) if with_M else None
        fam = build_family(X0, X1, M)
        R = fam.Pstar @ X1 @ fam.W
        g = np.linalg.eigvalsh(hermitize(R.conj().T @ R))
        if g[0] > min_rel_germ * g[-1]:
            return fam
    raise DegenerateGerm("could not draw a nondegenerate family")
