"""Lattices, first-order symbols b(xi) and band-limited periodic matrix fields.

Fields are stored by Fourier coefficients indexed by integer vectors j, with
    F(x) = sum_j F_j exp(i <b(j), x>),   b(j) = sum_l j_l b_l,
so sampling on the fractional grid x = sum xi_j a_j only needs the indices.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RankDeficientSymbol, SingularBasis, SingularPointValue


@dataclass(frozen=True)
class Lattice:
    basis: np.ndarray        # rows a_j
    dual_basis: np.ndarray   # rows b_l, <b_l, a_j> = 2 pi delta_lj
    cell_volume: float
    dual_cell_volume: float
    r0: float

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    def dual_vectors(self, idx) -> np.ndarray:
        return np.asarray(idx, dtype=float) @ self.dual_basis

    def enumerate_dual(self, radius: float) -> np.ndarray:
        """Integer indices of all dual vectors with |b| <= radius, sorted by (|b|, index)."""
        inv = np.linalg.inv(self.dual_basis)
        bound = np.floor(radius * np.linalg.norm(inv, axis=0) + 1e-9).astype(int)
        axes = [np.arange(-k, k + 1) for k in bound]
        idx = np.array(list(itertools.product(*axes)), dtype=int).reshape(-1, self.d)
        norms = np.linalg.norm(self.dual_vectors(idx), axis=1)
        keep = norms <= radius * (1 + 1e-12) + 1e-12
        idx, norms = idx[keep], norms[keep]
        order = np.lexsort(tuple(idx.T[::-1]) + (np.round(norms, 12),))
        return idx[order]


def make_lattice(basis) -> Lattice:
    A = np.atleast_2d(np.asarray(basis, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise SingularBasis("basis must be d vectors in R^d")
    det = np.linalg.det(A)
    if abs(det) < 1e-12 * max(np.abs(A).max(), 1.0) ** A.shape[0]:
        raise SingularBasis("lattice basis is singular")
    B = 2 * np.pi * np.linalg.inv(A).T
    vol = abs(det)
    dual_vol = abs(np.linalg.det(B))
    shortest = np.linalg.norm(B, axis=1).min()
    proto = Lattice(A, B, vol, dual_vol, 0.0)
    idx = proto.enumerate_dual(shortest)
    norms = np.linalg.norm(proto.dual_vectors(idx), axis=1)
    r0 = 0.5 * norms[norms > 1e-12].min()
    return Lattice(A, B, vol, dual_vol, float(r0))


def sphere_grid(d: int, count: int) -> np.ndarray:
    """Deterministic unit vectors: +-1 (d=1), equispaced angles (d=2),
    Fibonacci points (d=3), seeded Gaussian directions otherwise."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        phi = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(phi), np.sin(phi)])
    if d == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        r = np.sqrt(1 - z * z)
        phi = np.pi * (1 + 5 ** 0.5) * i
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    v = np.random.default_rng(0).standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class Symbol:
    """b(xi) = sum_l xi_l b_l with constant m x n matrices b_l (stored as (d, m, n))."""
    b: np.ndarray

    @property
    def d(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def n(self) -> int:
        return self.b.shape[2]

    def __call__(self, xi) -> np.ndarray:
        return np.tensordot(np.asarray(xi, dtype=float), self.b, axes=(-1, 0))


def make_symbol(b) -> Symbol:
    b = np.asarray(b, dtype=complex)
    if b.ndim != 3:
        raise ConfigError("symbol must be a (d, m, n) array")
    if b.shape[1] < b.shape[2]:
        raise ConfigError("symbol needs m >= n")
    return Symbol(b)


def gradient_symbol(d: int) -> Symbol:
    """b(D) = D: m = d, n = 1."""
    return Symbol(np.eye(d, dtype=complex).reshape(d, d, 1))


def estimate_symbol_bounds(sym: Symbol, sphere_samples: int = 360) -> tuple[float, float]:
    if sphere_samples < 2 * sym.d:
        raise ValueError("need at least 2d sphere samples")
    bt = sym(sphere_grid(sym.d, sphere_samples))
    w = np.linalg.eigvalsh(np.conj(np.swapaxes(bt, -1, -2)) @ bt)
    a0, a1 = float(w[:, 0].min()), float(w[:, -1].max())
    if a0 <= 1e-12 * max(a1, 1.0):
        raise RankDeficientSymbol(f"b(theta) loses rank: alpha0 = {a0:.3e}")
    return a0, a1


# --- periodic fields ---------------------------------------------------------

def default_grid(bandwidth: int, minimum: int = 64) -> int:
    return int(max(minimum, 4 * bandwidth + 2))


@dataclass(frozen=True)
class PeriodicField:
    indices: np.ndarray      # (K, d) integers
    coeffs: np.ndarray       # (K, rows, cols) complex
    cutoff: float | None = None
    truncation_residual: float = 0.0
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        lk = {tuple(int(v) for v in j): i for i, j in enumerate(self.indices)}
        object.__setattr__(self, "_lookup", lk)

    @property
    def d(self) -> int:
        return self.indices.shape[1]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    @property
    def bandwidth(self) -> int:
        return int(np.abs(self.indices).max()) if self.indices.size else 0

    def coeff(self, j) -> np.ndarray:
        i = self._lookup.get(tuple(int(v) for v in j))
        return np.zeros((self.rows, self.cols), complex) if i is None else self.coeffs[i]

    def mean(self) -> np.ndarray:
        return self.coeff((0,) * self.d)

    def is_hermitian_valued(self, tol: float = 1e-12) -> bool:
        if self.rows != self.cols:
            return False
        return all(np.abs(self.coeff(-j) - c.conj().T).max() <= tol
                   for j, c in zip(self.indices, self.coeffs))

    def sample(self, grid: int | None = None) -> np.ndarray:
        """Values on the uniform fractional grid, shape (grid,)*d + (rows, cols)."""
        M = grid or default_grid(self.bandwidth)
        if M <= 2 * self.bandwidth:
            raise ValueError("grid too coarse for this field")
        C = np.zeros((M,) * self.d + (self.rows, self.cols), complex)
        for j, c in zip(self.indices, self.coeffs):
            C[tuple(np.mod(j, M))] += c
        axes = tuple(range(self.d))
        return np.fft.ifftn(C, axes=axes) * M ** self.d

    def min_eig(self, grid: int | None = None) -> float:
        v = self.sample(grid)
        return float(np.linalg.eigvalsh(0.5 * (v + np.conj(np.swapaxes(v, -1, -2))))[..., 0].min())

    def is_positive_definite(self, grid: int | None = None) -> bool:
        return self.min_eig(grid) > 0

    def sup_norm(self, grid: int | None = None) -> float:
        return float(np.linalg.norm(self.sample(grid), 2, axis=(-2, -1)).max())

    def inverse_sup_norm(self, grid: int | None = None) -> float:
        """max_x |F(x)^{-1}| on the sampling grid."""
        v = self.sample(grid)
        s = np.linalg.svd(v, compute_uv=False)
        if s[..., -1].min() <= 1e-14 * s.max():
            raise SingularPointValue("field is singular at a grid point")
        return float((1.0 / s[..., -1]).max())

    def inverse_mean(self, grid: int | None = None) -> np.ndarray:
        """(mean of F^{-1})^{-1} by pointwise inversion on the grid."""
        return np.linalg.inv(pointwise(self, np.linalg.inv, grid, keep=0).mean())

    def to_json(self) -> list:
        return [{"index": [int(v) for v in j], "re": c.real.tolist(), "im": c.imag.tolist()}
                for j, c in zip(self.indices, self.coeffs)]


def make_field(coeffs: dict, d: int | None = None, cutoff=None) -> PeriodicField:
    """Build a field from {index tuple: matrix}; scalars are promoted to 1x1."""
    if not coeffs:
        raise ConfigError("field has no coefficients")
    items = sorted((tuple(int(v) for v in np.atleast_1d(k)), np.atleast_2d(np.asarray(v, complex)))
                   for k, v in coeffs.items())
    d = d or len(items[0][0])
    shapes = {c.shape for _, c in items}
    if len(shapes) != 1 or any(len(k) != d for k, _ in items):
        raise ConfigError("inconsistent field coefficient shapes")
    idx = np.array([k for k, _ in items], dtype=int).reshape(-1, d)
    return PeriodicField(idx, np.array([c for _, c in items]), cutoff)


def constant_field(mat, d: int) -> PeriodicField:
    return make_field({(0,) * d: np.atleast_2d(mat)}, d)


def field_from_json(data, d: int | None = None) -> PeriodicField:
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"field JSON: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("coefficients", data.get("coeffs"))
    if not isinstance(data, list):
        raise ConfigError("field must be a list of {index, re, im} entries")
    coeffs = {}
    for i, item in enumerate(data):
        try:
            re = np.asarray(item["re"], float)
            im = np.asarray(item.get("im", np.zeros_like(re)), float)
            coeffs[tuple(item["index"])] = np.atleast_2d(re + 1j * im)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"field entry [{i}]: {exc}") from exc
    return make_field(coeffs, d)


def from_grid(values: np.ndarray, keep: int, d: int) -> PeriodicField:
    """Fourier coefficients of grid samples, truncated to the box |j_i| <= keep."""
    M = values.shape[0]
    keep = min(keep, (M - 1) // 2)
    C = np.fft.fftn(values, axes=tuple(range(d))) / M ** d
    axes = [np.arange(-keep, keep + 1)] * d
    idx = np.array(list(itertools.product(*axes)), dtype=int).reshape(-1, d)
    coeffs = C[tuple(np.mod(idx, M).T)]
    mask = np.ones(C.shape[:d], bool)
    mask[tuple(np.mod(idx, M).T)] = False
    resid = float(np.abs(C[mask]).max()) if mask.any() else 0.0
    return PeriodicField(idx, coeffs, float(keep), resid)


def pointwise(fld: PeriodicField, fn, grid: int | None = None, keep: int = 24) -> PeriodicField:
    """Apply a pointwise matrix function on the grid and re-truncate to |j_i| <= keep."""
    M = grid or default_grid(max(fld.bandwidth, keep), minimum=128)
    v = fld.sample(M)
    try:
        w = fn(v)
    except np.linalg.LinAlgError as exc:
        raise SingularPointValue(str(exc)) from exc
    return from_grid(w, keep, fld.d)


def inverse_field(fld: PeriodicField, keep: int = 24, grid: int | None = None) -> PeriodicField:
    if fld.rows != fld.cols:
        raise ValueError("only square fields can be inverted")
    fld.inverse_sup_norm(grid)
    return pointwise(fld, np.linalg.inv, grid, keep)
