"""Plane-wave Galerkin discretization of the fiber operators and the cell problems.

All multiplication operators become truncated convolution matrices on a
ModeSet (dual-lattice vectors with |b| <= cutoff).  Vector-valued unknowns are
laid out mode-major: entry ``a * r + i`` is component i of mode a.  Matrix
valued periodic unknowns (such as the corrector, n x m) are stored as arrays
of shape (K, n, m), whose mode-major stacking (K n, m) treats each column as
one vector-valued function.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import SolveFailure, SolvabilityViolation, VoigtReussViolation
from .lattice import (Lattice, PeriodicField, Symbol, estimate_symbol_bounds,
                      inverse_field, pointwise)
from .linalg import hermitize, psd_sqrt

SOLVE_TOL = 1e-10


@dataclass(frozen=True)
class ModeSet:
    lattice: Lattice
    cutoff: float
    indices: np.ndarray
    vectors: np.ndarray
    zero: int

    def __len__(self) -> int:
        return len(self.indices)

    def locate(self, idx: np.ndarray) -> np.ndarray:
        """Positions of the integer vectors ``idx`` (shape (..., d)); -1 if absent."""
        idx = np.asarray(idx, dtype=np.int64)
        L = int(max(np.abs(self.indices).max(), np.abs(idx).max())) + 1
        base = 2 * L + 1
        w = base ** np.arange(self.lattice.d, dtype=np.int64)
        keys = (self.indices + L) @ w
        order = np.argsort(keys)
        sk = keys[order]
        q = (idx + L) @ w
        pos = np.clip(np.searchsorted(sk, q), 0, len(sk) - 1)
        return np.where(sk[pos] == q, order[pos], -1)


def build_modes(lattice: Lattice, cutoff: float) -> ModeSet:
    idx = lattice.enumerate_dual(cutoff)
    zero = int(np.flatnonzero(~idx.any(axis=1))[0])
    return ModeSet(lattice, float(cutoff), idx, lattice.dual_vectors(idx), zero)


def convolution_matrix(fld: PeriodicField, modes: ModeSet) -> sp.csr_matrix:
    """[F]_{ab} = F_{j_a - j_b} restricted to the mode set, as a (K r) x (K c) sparse matrix."""
    K, r, c = len(modes), fld.rows, fld.cols
    a = np.repeat(np.arange(K), len(fld.indices))
    s = np.tile(np.arange(len(fld.indices)), K)
    b = modes.locate(modes.indices[a] - fld.indices[s])
    ok = b >= 0
    a, b, s = a[ok], b[ok], s[ok]
    ii, kk = np.meshgrid(np.arange(r), np.arange(c), indexing="ij")
    rows = (a[:, None, None] * r + ii).ravel()
    cols = (b[:, None, None] * c + kk).ravel()
    vals = fld.coeffs[s].ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(K * r, K * c))


def block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    K, r, c = blocks.shape
    ii, kk = np.meshgrid(np.arange(r), np.arange(c), indexing="ij")
    a = np.arange(K)[:, None, None]
    return sp.csr_matrix((blocks.ravel(), ((a * r + ii).ravel(), (a * c + kk).ravel())),
                         shape=(K * r, K * c))


def symbol_matrix(sym: Symbol, modes: ModeSet, k) -> sp.csr_matrix:
    """Block-diagonal matrix of b(D + k): blocks b(b_a + k)."""
    return block_diag(sym(modes.vectors + np.asarray(k, float)))


def stack(arr: np.ndarray) -> np.ndarray:
    return arr.reshape(arr.shape[0] * arr.shape[1], arr.shape[2])


def unstack(mat: np.ndarray, r: int) -> np.ndarray:
    return mat.reshape(-1, r, mat.shape[1])


@dataclass(frozen=True)
class FiberMatrix:
    k: np.ndarray
    matrix: np.ndarray
    variant: str


class CellOperator:
    """A = f^* b(D)^* g b(D) f on a lattice, discretized on modes |b| <= cutoff."""

    def __init__(self, lattice: Lattice, symbol: Symbol, g: PeriodicField,
                 f: PeriodicField | None = None, cutoff: float | None = None,
                 inverse_keep: int | None = None):
        if g.rows != symbol.m or g.cols != symbol.m:
            raise ValueError("g must be m x m")
        if f is not None and (f.rows != symbol.n or f.cols != symbol.n):
            raise ValueError("f must be n x n")
        self.lattice, self.symbol, self.g, self.f = lattice, symbol, g, f
        bw = max(g.bandwidth, f.bandwidth if f is not None else 0, 1)
        self.cutoff = float(cutoff if cutoff is not None else 8 * bw
                            * np.linalg.norm(lattice.dual_basis, axis=1).max())
        self.modes = build_modes(lattice, self.cutoff)
        # inverse fields are truncated to a box that covers all mode differences
        self.inverse_keep = inverse_keep or int(np.abs(self.modes.indices).max()) * 2

    @property
    def n(self) -> int:
        return self.symbol.n

    @property
    def m(self) -> int:
        return self.symbol.m

    @property
    def hat(self) -> bool:
        return self.f is None

    @cached_property
    def G(self) -> sp.csr_matrix:
        return convolution_matrix(self.g, self.modes)

    @cached_property
    def F(self) -> sp.csr_matrix:
        if self.f is None:
            return sp.identity(len(self.modes) * self.n, complex, format="csr")
        return convolution_matrix(self.f, self.modes)

    @cached_property
    def f_inverse(self) -> PeriodicField | None:
        return None if self.f is None else inverse_field(self.f, self.inverse_keep)

    @cached_property
    def Finv(self) -> sp.csr_matrix:
        """Convolution matrix of the pointwise inverse f^{-1} (not the inverse of F)."""
        if self.f is None:
            return self.F
        return convolution_matrix(self.f_inverse, self.modes)

    @cached_property
    def Q(self) -> PeriodicField | None:
        if self.f is None:
            return None
        return pointwise(self.f, lambda v: np.linalg.inv(v @ np.conj(np.swapaxes(v, -1, -2))),
                         keep=self.inverse_keep)

    @cached_property
    def Qmat(self) -> sp.csr_matrix:
        if self.Q is None:
            return sp.identity(len(self.modes) * self.n, complex, format="csr")
        return convolution_matrix(self.Q, self.modes)

    @cached_property
    def Q_bar(self) -> np.ndarray:
        return np.eye(self.n, dtype=complex) if self.Q is None else hermitize(self.Q.mean())

    @cached_property
    def ff_bar(self) -> np.ndarray:
        """mean(f f^*) via Parseval."""
        if self.f is None:
            return np.eye(self.n, dtype=complex)
        c = self.f.coeffs
        return hermitize(np.einsum("kij,klj->il", c, c.conj()))

    @cached_property
    def f0(self) -> np.ndarray:
        return psd_sqrt(self.Q_bar, inverse=True)

    @cached_property
    def symbol_bounds(self) -> tuple[float, float]:
        return estimate_symbol_bounds(self.symbol, 720)

    @cached_property
    def c_star(self) -> float:
        a0 = self.symbol_bounds[0]
        finv = 1.0 if self.f is None else self.f.inverse_sup_norm(256)
        return a0 / (finv ** 2 * self.g.inverse_sup_norm(256))

    @cached_property
    def t0(self) -> float:
        """(r0/2)(alpha0/alpha1)^{1/2} / (|h| |h^-1| |f| |f^-1|) with |h|^2 = |g|."""
        a0, a1 = self.symbol_bounds
        hh = np.sqrt(self.g.sup_norm(256) * self.g.inverse_sup_norm(256))
        ff = 1.0 if self.f is None else self.f.sup_norm(256) * self.f.inverse_sup_norm(256)
        return 0.5 * self.lattice.r0 * np.sqrt(a0 / a1) / (hh * ff)

    @cached_property
    def G_factor(self) -> np.ndarray:
        """Lower Cholesky factor L of the dense G = L L^*."""
        return np.linalg.cholesky(hermitize(self.G.toarray()))

    def energy_columns(self, k, V: np.ndarray) -> np.ndarray:
        """L^* B(k) F V, so that V^* A(k) V = X^* X without forming A."""
        return self.G_factor.conj().T @ (self.B(k) @ (self.F @ V))

    @property
    def delta(self) -> float:
        return 0.25 * self.c_star * self.lattice.r0 ** 2

    # --- fibers ---------------------------------------------------------------

    def B(self, k) -> sp.csr_matrix:
        return symbol_matrix(self.symbol, self.modes, k)

    def fiber(self, k, variant: str = "auto", g0: np.ndarray | None = None) -> FiberMatrix:
        """Galerkin fiber matrix.  Variants: hat, sandwiched, effective_hat,
        effective_sandwiched ('auto' picks hat or sandwiched)."""
        k = np.asarray(k, float).reshape(self.lattice.d)
        if variant == "auto":
            variant = "hat" if self.f is None else "sandwiched"
        B = self.B(k)
        if variant in ("hat", "sandwiched"):
            A = (B.conj().T @ self.G @ B)
            if variant == "sandwiched":
                A = self.F.conj().T @ A @ self.F
            A = A.toarray()
        elif variant in ("effective_hat", "effective_sandwiched"):
            if g0 is None:
                raise ValueError("effective fibers need g0")
            A = effective_blocks(self.symbol, self.modes, k, g0)
            if variant == "effective_sandwiched":
                A = self.f0 @ A @ self.f0
            A = block_diag(A).toarray()
        else:
            raise ValueError(f"unknown fiber variant {variant!r}")
        return FiberMatrix(k, hermitize(A), variant)

    # --- cell problems --------------------------------------------------------

    @cached_property
    def _nonzero_dofs(self) -> np.ndarray:
        K, n = len(self.modes), self.n
        mask = np.ones(K * n, bool)
        mask[self.modes.zero * n:(self.modes.zero + 1) * n] = False
        return np.flatnonzero(mask)

    @cached_property
    def B0(self) -> sp.csr_matrix:
        return self.B(np.zeros(self.lattice.d))

    @cached_property
    def A0(self) -> sp.csr_matrix:
        return (self.B0.conj().T @ self.G @ self.B0).tocsr()

    @cached_property
    def _lu(self):
        idx = self._nonzero_dofs
        return splu(self.A0[idx][:, idx].tocsc())

    def solve_cell(self, rhs: np.ndarray, check: str = "solve") -> np.ndarray:
        """Solve b(D)^* g b(D) u = rhs for zero-mean u, rhs stacked (K n, cols)."""
        idx = self._nonzero_dofs
        scale = max(np.abs(rhs).max(), 1.0)
        z = self.modes.zero * self.n
        if np.abs(rhs[z:z + self.n]).max() > SOLVE_TOL * scale:
            raise SolvabilityViolation(
                f"right side has nonzero mean {np.abs(rhs[z:z + self.n]).max():.2e}")
        u = np.zeros(rhs.shape, complex)
        u[idx] = self._lu.solve(np.ascontiguousarray(rhs[idx]))
        res = np.abs(self.A0 @ u - rhs)[idx].max() / scale
        if not np.isfinite(res) or res > SOLVE_TOL:
            raise SolveFailure(f"{check}: residual {res:.2e}")
        return u

    def mean_Q(self, u: np.ndarray) -> np.ndarray:
        """mean(Q u) for a stacked periodic unknown u."""
        z = self.modes.zero * self.n
        return (self.Qmat @ u)[z:z + self.n]

    def correctors(self) -> "CorrectorSet":
        return compute_correctors(self)


def effective_blocks(sym: Symbol, modes: ModeSet, k, g0) -> np.ndarray:
    bk = sym(modes.vectors + np.asarray(k, float))
    return np.conj(np.swapaxes(bk, -1, -2)) @ g0 @ bk


@dataclass(frozen=True)
class CorrectorSet:
    modes: ModeSet
    lam: np.ndarray          # (K, n, m), zero mean
    g_tilde: np.ndarray      # (K, m, m) on the mode set
    g0: np.ndarray
    g_bar: np.ndarray
    g_lower: np.ndarray
    lam_Q: np.ndarray
    lam2: np.ndarray         # (d, K, n, m)
    lam2_Q: np.ndarray
    residuals: dict
    voigt_reuss: tuple       # (min eig g0 - g_lower, min eig g_bar - g0)

    def field(self, name: str = "lam", l: int | None = None) -> PeriodicField:
        arr = getattr(self, name)
        if l is not None:
            arr = arr[l]
        return PeriodicField(self.modes.indices, arr.copy(), self.modes.cutoff)

    def lam2_theta(self, theta, weighted: bool = False) -> np.ndarray:
        arr = self.lam2_Q if weighted else self.lam2
        return np.tensordot(np.asarray(theta, float), arr, axes=(0, 0))


def compute_correctors(op: CellOperator, second: bool = True) -> CorrectorSet:
    """Solve for the corrector, its Q-normalized shift, g~, g0 and the second correctors."""
    K, n, m, z = len(op.modes), op.n, op.m, op.modes.zero
    B0, G = op.B0, op.G
    E = np.zeros((K * m, m), complex)
    E[z * m:(z + 1) * m] = np.eye(m)
    lam_s = op.solve_cell(-(B0.conj().T @ (G @ E)), "corrector")
    lam = unstack(lam_s, n)
    Wst = B0 @ lam_s + E
    gt_s = G @ Wst
    g_tilde = unstack(gt_s, m)
    g0_raw = g_tilde[z]
    herm_def = float(np.abs(g0_raw - g0_raw.conj().T).max())
    g0 = hermitize(g0_raw)
    g_bar = hermitize(op.g.mean())
    g_lower = hermitize(op.g.inverse_mean(256))
    vr = (float(np.linalg.eigvalsh(g0 - g_lower)[0]), float(np.linalg.eigvalsh(g_bar - g0)[0]))
    if min(vr) < -1e-10 * max(np.linalg.norm(g_bar, 2), 1.0):
        raise VoigtReussViolation(f"Voigt-Reuss ordering fails: {vr}")
    residuals = {"g0_hermitian_defect": herm_def,
                 "g_tilde_mean_vs_energy": float(np.abs(g0_raw - Wst.conj().T @ (G @ Wst)).max())}
    if m == n:
        residuals["g0_minus_g_lower"] = float(np.abs(g0 - g_lower).max())

    lam_Q = lam.copy()
    lam_Q[z] = -np.linalg.solve(op.Q_bar, op.mean_Q(lam_s))
    residuals["mean_Q_lam_Q"] = float(np.abs(op.mean_Q(stack(lam_Q))).max())

    d = op.lattice.d
    lam2 = np.zeros((d, K, n, m), complex)
    lam2_Q = np.zeros((d, K, n, m), complex)
    if second:
        bl = op.symbol.b
        for l in range(d):
            blH = bl[l].conj().T
            src = np.einsum("nm,kmp->knp", blH, -g_tilde)
            src[z] += blH @ g0
            drive = stack(np.einsum("mn,knp->kmp", bl[l], lam))
            rhs = stack(src) - B0.conj().T @ (G @ drive)
            lam2[l] = unstack(op.solve_cell(rhs, f"second corrector {l}"), n)

            c = np.zeros((K * n, m), complex)
            c[z * n:(z + 1) * n] = np.linalg.solve(op.Q_bar, blH @ g0)
            srcQ = stack(np.einsum("nm,kmp->knp", blH, -g_tilde)) + op.Qmat @ c
            driveQ = stack(np.einsum("mn,knp->kmp", bl[l], lam_Q))
            rhsQ = srcQ - B0.conj().T @ (G @ driveQ)
            vQ = op.solve_cell(rhsQ, f"weighted second corrector {l}")
            vQ[z * n:(z + 1) * n] = -np.linalg.solve(op.Q_bar, op.mean_Q(vQ))
            lam2_Q[l] = unstack(vQ, n)
    return CorrectorSet(op.modes, lam, g_tilde, g0, g_bar, g_lower, lam_Q, lam2, lam2_Q,
                        residuals, vr)
