"""Direction-dependent threshold characteristics of the discretized operator.

For a unit vector theta the germ is S(theta) = b(theta)^* g0 b(theta), taken
with the weight Q_bar in the sandwiched case.  N(theta), N1(theta) and the
fourth-order blocks follow from Parseval sums over the corrector coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .cell import CellOperator, CorrectorSet, stack
from .errors import ClusterResolutionFailure
from .lattice import sphere_grid
from .linalg import CLUSTER_RTOL, SUBCLUSTER_RTOL, group_sorted, hermitize

ZERO_RTOL = 1e-9


@dataclass(frozen=True)
class GermBranch:
    gamma: float
    mu: float
    nu: float
    zeta: np.ndarray
    cluster: int


@dataclass(frozen=True)
class GermPack:
    theta: np.ndarray
    weighted: bool
    S_hat: np.ndarray
    Q_bar: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray              # columns, Q_bar-orthonormal
    clusters: list                # index arrays into gamma
    f0: np.ndarray
    N: np.ndarray | None = None
    N0: np.ndarray | None = None
    Nstar: np.ndarray | None = None
    N1: np.ndarray | None = None
    nu_blocks: dict = field(default_factory=dict)
    branches: list = field(default_factory=list)

    @property
    def mu(self) -> np.ndarray:
        return np.array([b.mu for b in self.branches])

    @property
    def nu(self) -> np.ndarray:
        return np.array([b.nu for b in self.branches])


class Germ:
    """Threshold characteristics of a CellOperator with solved correctors."""

    def __init__(self, op: CellOperator, cs: CorrectorSet | None = None):
        self.op = op
        self.cs = cs if cs is not None else op.correctors()

    # precomputed theta-independent pieces
    @cached_property
    def _L(self) -> dict:
        """Per axis l and variant: mean(Lam^* b_l^* g~) + h.c., an m x m matrix."""
        b, cs = self.op.symbol.b, self.cs
        out = {}
        for weighted, lam in ((False, cs.lam), (True, cs.lam_Q)):
            mats = []
            for l in range(self.op.lattice.d):
                bg = np.einsum("pn,kpm->knm", b[l].conj(), cs.g_tilde)
                L = np.einsum("kna,knm->am", lam.conj(), bg)
                mats.append(L + L.conj().T)
            out[weighted] = np.array(mats)
        return out

    @cached_property
    def _lam_gram(self) -> dict:
        cs, op = self.cs, self.op
        ls, lqs = stack(cs.lam), stack(cs.lam_Q)
        return {False: hermitize(ls.conj().T @ ls),
                True: hermitize(lqs.conj().T @ (op.Qmat @ lqs))}

    def _variant(self, variant: str) -> bool:
        if variant not in ("hat", "Q"):
            raise ValueError(f"unknown variant {variant!r}")
        return variant == "Q" and not self.op.hat

    def L(self, theta, variant: str = "hat") -> np.ndarray:
        return np.tensordot(np.asarray(theta, float), self._L[self._variant(variant)], axes=(0, 0))

    def L2(self, theta, variant: str = "hat") -> np.ndarray:
        w = self._variant(variant)
        op, cs = self.op, self.cs
        theta = np.asarray(theta, float)
        bt = op.symbol(theta)
        lam = cs.lam_Q if w else cs.lam
        lam2 = cs.lam2_theta(theta, w)
        t1 = np.einsum("kna,knm->am", lam2.conj(), np.einsum("pn,kpm->knm", bt.conj(), cs.g_tilde))
        bj = op.symbol(op.modes.vectors)
        Y = stack(bj @ lam2 + np.einsum("mn,knp->kmp", bt, lam))
        t2 = Y.conj().T @ (op.G @ Y)
        return hermitize(t1 + t1.conj().T + t2)

    # --- per-direction objects ---------------------------------------------------

    def germ_at(self, theta, variant: str = "hat") -> GermPack:
        w = self._variant(variant)
        op = self.op
        theta = np.asarray(theta, float)
        bt = op.symbol(theta)
        S = hermitize(bt.conj().T @ self.cs.g0 @ bt)
        Qb = op.Q_bar if w else np.eye(op.n, dtype=complex)
        gam, zeta = sla.eigh(S, Qb)
        scale = max(np.abs(gam).max(), np.finfo(float).tiny)
        clusters = group_sorted(gam, CLUSTER_RTOL * scale)
        f0 = op.f0 if w else np.eye(op.n, dtype=complex)
        return GermPack(theta, w, S, Qb, gam, zeta, clusters, f0)

    def _projectors(self, gp: GermPack):
        """Cluster projections: Q_bar-orthogonal ('oblique') ones and unweighted orthoprojectors."""
        obl, orth = [], []
        for idx in gp.clusters:
            Zq = gp.zeta[:, idx]
            obl.append(Zq @ Zq.conj().T @ gp.Q_bar)
            Qz, _ = np.linalg.qr(Zq)
            orth.append(Qz @ Qz.conj().T)
        return obl, orth

    def n_operator_at(self, theta, variant: str = "hat"):
        """(N, N0, Nstar) for direction theta."""
        gp = self.germ_at(theta, variant)
        bt = self.op.symbol(gp.theta)
        N = hermitize(bt.conj().T @ self.L(gp.theta, variant) @ bt)
        obl, _ = self._projectors(gp)
        N0 = sum(p.conj().T @ N @ p for p in obl)
        return N, N0, N - N0

    def full_at(self, theta, variant: str = "hat") -> GermPack:
        """Germ, N split, N1 and the fourth-order blocks with their eigenvalues."""
        gp = self.germ_at(theta, variant)
        op = self.op
        bt = op.symbol(gp.theta)
        N = hermitize(bt.conj().T @ self.L(gp.theta, variant) @ bt)
        obl, _ = self._projectors(gp)
        N0 = sum(p.conj().T @ N @ p for p in obl)
        N1 = hermitize(bt.conj().T @ self.L2(gp.theta, variant) @ bt)
        ZZ = hermitize(bt.conj().T @ self._lam_gram[gp.weighted] @ bt)
        # in constant-vector coordinates the germ acts as Q_bar^{-1} S_hat and the
        # cluster projections are zeta_j zeta_j^* (zeta Q_bar-orthonormal)
        Qi = np.linalg.inv(gp.Q_bar)
        S = gp.S_hat
        ZZS = ZZ @ Qi @ S
        Mbase = N1 - 0.5 * (ZZS + ZZS.conj().T)
        scale = max(np.linalg.norm(N, 2), np.linalg.norm(S, 2))
        gcl = [float(gp.gamma[idx].mean()) for idx in gp.clusters]
        branches, blocks = [], {}
        for q, idx in enumerate(gp.clusters):
            Zq = gp.zeta[:, idx]
            mu, U = np.linalg.eigh(hermitize(Zq.conj().T @ N @ Zq))
            Mq = Mbase
            for j, jdx in enumerate(gp.clusters):
                if j != q:
                    Zj = gp.zeta[:, jdx]
                    Mq = Mq + N @ Zj @ Zj.conj().T @ N / (gcl[q] - gcl[j])
            subs = group_sorted(mu, SUBCLUSTER_RTOL * scale)
            coarse = group_sorted(mu, 10 * SUBCLUSTER_RTOL * scale)
            if len(subs) != len(coarse):
                raise ClusterResolutionFailure(
                    f"mu subclusters unstable at theta={gp.theta}")
            for qq, sidx in enumerate(subs):
                B = Zq @ U[:, sidx]
                blk = hermitize(B.conj().T @ Mq @ B)
                blocks[(qq, q)] = blk
                nu, V = np.linalg.eigh(blk)
                for a in range(nu.size):
                    branches.append(GermBranch(gcl[q], float(mu[sidx].mean()), float(nu[a]),
                                               B @ V[:, a], q))
        return GermPack(gp.theta, gp.weighted, S, gp.Q_bar, gp.gamma, gp.zeta, gp.clusters,
                        gp.f0, N, N0, N - N0, N1, blocks, branches)

    def nu_operator_at(self, theta, qp: int, q: int, variant: str = "hat"):
        """The fourth-order block on subcluster (q', q) and its eigenvalues."""
        gp = self.full_at(theta, variant)
        blk = gp.nu_blocks[(qp, q)]
        return blk, np.linalg.eigvalsh(blk)

    # --- scans --------------------------------------------------------------------

    def scan_conditions(self, thetas=None, variant: str = "hat", count: int | None = None):
        d = self.op.lattice.d
        if thetas is None:
            thetas = sphere_grid(d, count or {1: 2, 2: 360, 3: 2000}.get(d, 500))
        return scan_conditions(self, np.asarray(thetas, float), variant)


@dataclass(frozen=True)
class ThetaScan:
    thetas: np.ndarray
    gamma: np.ndarray         # (T, n)
    mu: np.ndarray            # (T, n)
    norm_N: np.ndarray
    norm_N0: np.ndarray
    norm_Nstar: np.ndarray
    cluster_count: np.ndarray
    N_zero: bool
    N0_zero: bool
    coupled_pairs: list
    crossings: list
    c_star: float
    c_circ: float | None
    warnings: list

    def rows(self):
        for i, th in enumerate(self.thetas):
            yield i, th, self.gamma[i], self.mu[i], (self.norm_N[i], self.norm_N0[i],
                                                     self.norm_Nstar[i]), self.cluster_count[i]


def scan_conditions(germ: Germ, thetas: np.ndarray, variant: str = "hat") -> ThetaScan:
    n = germ.op.n
    T = len(thetas)
    gam = np.zeros((T, n))
    mu = np.zeros((T, n))
    nN, nN0, nNs = np.zeros(T), np.zeros(T), np.zeros(T)
    counts = np.zeros(T, int)
    coupling = np.zeros((n, n))
    for i, th in enumerate(thetas):
        gp = germ.germ_at(th, variant)
        N, N0, Ns = germ.n_operator_at(th, variant)
        gam[i] = gp.gamma
        Zt = gp.zeta
        C = np.abs(Zt.conj().T @ N @ Zt)
        coupling = np.maximum(coupling, C)
        mu_i = []
        for idx in gp.clusters:
            Zq = Zt[:, idx]
            mu_i.extend(np.linalg.eigvalsh(hermitize(Zq.conj().T @ N @ Zq)))
        mu[i] = mu_i
        nN[i], nN0[i], nNs[i] = (np.linalg.norm(a, 2) for a in (N, N0, Ns))
        counts[i] = len(gp.clusters)
    scale = max(1.0, float(np.abs(gam).max()))
    c_star = germ.op.c_star
    pairs = [(k, r) for k in range(n) for r in range(k + 1, n)
             if coupling[k, r] > ZERO_RTOL * scale]
    crossings, warnings = [], []
    c_circ = None
    for k, r in pairs:
        gap = np.abs(gam[:, k] - gam[:, r])
        if gap.min() <= CLUSTER_RTOL * scale:
            crossings.append((k, r))
            warnings.append(f"coupled branches {k + 1},{r + 1} cross on the grid")
        c = float(np.minimum(c_star, gap / n).min())
        c_circ = c if c_circ is None else min(c_circ, c)
    if len(set(counts.tolist())) > 1:
        warnings.append("number of distinct germ eigenvalues varies with theta")
    return ThetaScan(thetas, gam, mu, nN, nN0, nNs, counts,
                     bool(nN.max() < ZERO_RTOL * scale), bool(nN0.max() < ZERO_RTOL * scale),
                     pairs, crossings, c_star, c_circ, warnings)
