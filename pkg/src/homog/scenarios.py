"""Builtin scenarios and the JSON scenario loader."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cell import CellOperator
from .errors import ConfigError, HomogError
from .lattice import (Lattice, PeriodicField, Symbol, field_from_json, gradient_symbol,
                      make_field, make_lattice, make_symbol)


@dataclass(frozen=True)
class Scenario:
    name: str
    lattice: Lattice
    symbol: Symbol
    g: PeriodicField
    f: PeriodicField | None = None
    cutoff: float | None = None
    theta_count: int | None = None
    t_count: int = 24
    eps_grid: tuple = (0.1, 0.05, 0.025)
    tau_grid: tuple = (1.0, 10.0, 100.0)
    s_grid: tuple = (3.0,)
    expect: dict = field(default_factory=dict)     # N_zero, N0_zero, g0, ...
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.lattice.d

    def operator(self, cutoff: float | None = None) -> CellOperator:
        return CellOperator(self.lattice, self.symbol, self.g, self.f,
                            cutoff if cutoff is not None else self.cutoff)

    def with_cutoff(self, cutoff: float | None) -> "Scenario":
        return self if cutoff is None else replace(self, cutoff=float(cutoff))


def _check_fields(sc: Scenario) -> Scenario:
    if not sc.g.is_hermitian_valued():
        raise ConfigError(f"{sc.name}: g is not Hermitian-valued")
    if not sc.g.is_positive_definite(256):
        raise ConfigError(f"{sc.name}: g is not positive definite on the sampling grid")
    if sc.f is not None:
        try:
            sc.f.inverse_sup_norm(256)
        except HomogError as exc:
            raise ConfigError(f"{sc.name}: f is not invertible ({exc})") from exc
    return sc


# --- builtins -------------------------------------------------------------------------

def scalar_1d(f=None) -> Scenario:
    """g = 2 + cos x on 2 pi Z; g0 = sqrt(3)."""
    lat = make_lattice([[2 * np.pi]])
    g = make_field({(0,): 2.0, (1,): 0.5, (-1,): 0.5}, 1)
    expect = {"N_zero": True, "N0_zero": True, "g0": float(np.sqrt(3)),
              "criteria": ("3", "4", "7", "8b", "9b", "10")}
    if f is not None:
        expect = {"N_zero": True, "N0_zero": True, "criteria": ("4", "10")}
    return Scenario("1d_scalar" if f is None else "sandwich_f", lat, gradient_symbol(1), g, f,
                    cutoff=16.0, s_grid=(3.0, 2.0), expect=expect)


def complex_beta(c: float = 0.2) -> Scenario:
    """g = [[1, i beta'], [-i beta', 1]] with beta = c (sin x1 + cos 2 x1) on (2 pi Z)^2."""
    if not 0 < c < 1 / 3:
        raise ConfigError("2d_complex_beta: c must lie in (0, 1/3)")
    lat = make_lattice(2 * np.pi * np.eye(2))
    # beta' = c cos x1 - 2 c sin 2 x1
    bp = {(1, 0): c / 2, (-1, 0): c / 2, (2, 0): 1j * c, (-2, 0): -1j * c}
    coeffs = {(0, 0): np.eye(2, dtype=complex)}
    for j, v in bp.items():
        coeffs[j] = np.array([[0, 1j * v], [-1j * v, 0]])
    g = make_field(coeffs, 2)
    alpha = -1.5 * np.pi * c ** 3
    return Scenario("2d_complex_beta", lat, gradient_symbol(2), g, cutoff=24.0,
                    theta_count=360, expect={"N_zero": False, "N0_zero": False,
                                             "alpha": alpha,
                                             "criteria": ("4", "5", "8a", "9a", "10")},
                    params={"c": c})


def real_scalar_2d() -> Scenario:
    lat = make_lattice(2 * np.pi * np.eye(2))
    g = make_field({
        (0, 0): [[2.0, 0.0], [0.0, 2.0]],
        (1, 0): [[0.5, 0.0], [0.0, 0.0]], (-1, 0): [[0.5, 0.0], [0.0, 0.0]],
        (0, 1): [[0.0, 0.0], [0.0, 0.25]], (0, -1): [[0.0, 0.0], [0.0, 0.25]],
        (1, -1): [[0.0, 0.2], [0.2, 0.0]], (-1, 1): [[0.0, 0.2], [0.2, 0.0]],
    }, 2)
    return Scenario("2d_real_scalar", lat, gradient_symbol(2), g, cutoff=16.0,
                    s_grid=(3.0, 2.0), expect={"N_zero": True, "N0_zero": True,
                                               "criteria": ("4", "6", "8b", "10")})


def matrix_m_eq_n() -> Scenario:
    """n = m = 2 with b(xi) = xi_1 I + xi_2 J; g complex Hermitian."""
    lat = make_lattice(2 * np.pi * np.eye(2))
    sym = make_symbol([np.eye(2), [[0, -1], [1, 0]]])
    a = 0.15 * (1 + 1j)
    g = make_field({
        (0, 0): [[2.0, 0.0], [0.0, 2.0]],
        (1, 0): [[0.5, a], [np.conj(a), 0.0]],
        (-1, 0): [[0.5, a], [np.conj(a), 0.0]],
        (0, 1): [[0.0, 0.2j], [0.0, 0.25]],
        (0, -1): [[0.0, 0.0], [-0.2j, 0.25]],
    }, 2)
    return Scenario("matrix_m_eq_n", lat, sym, g, cutoff=16.0,
                    expect={"N_zero": True, "N0_zero": True,
                            "criteria": ("4", "6", "10")})


def sandwich_f() -> Scenario:
    """1d_scalar bordered by f = 1.2 + 0.5 sin x."""
    f = make_field({(0,): 1.2, (1,): -0.25j, (-1,): 0.25j}, 1)
    return scalar_1d(f)


BUILTINS = {
    "1d_scalar": scalar_1d,
    "2d_complex_beta": complex_beta,
    "2d_real_scalar": real_scalar_2d,
    "matrix_m_eq_n": matrix_m_eq_n,
    "sandwich_f": sandwich_f,
}


# --- JSON configs ---------------------------------------------------------------------

def _get(cfg: dict, key: str, path: str, default=...):
    if key in cfg:
        return cfg[key]
    if default is ...:
        raise ConfigError(f"{path}.{key}: missing")
    return default


def _complex_array(obj, path: str) -> np.ndarray:
    try:
        if isinstance(obj, dict):
            re = np.asarray(obj["re"], float)
            return re + 1j * np.asarray(obj.get("im", np.zeros_like(re)), float)
        return np.asarray(obj, float).astype(complex)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _field(obj, path: str, d: int) -> PeriodicField:
    try:
        return field_from_json(obj, d)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def scenario_from_dict(cfg: dict, name: str = "config") -> Scenario:
    if not isinstance(cfg, dict):
        raise ConfigError("scenario: top level must be an object")
    if "builtin" in cfg:
        sc = load_scenario(cfg["builtin"], **cfg.get("params", {}))
        return sc.with_cutoff(cfg.get("cutoff"))
    name = str(cfg.get("name", name))
    basis = _complex_array(_get(cfg, "lattice", "scenario"), "scenario.lattice").real
    try:
        lat = make_lattice(basis)
    except HomogError as exc:
        raise ConfigError(f"scenario.lattice: {exc}") from exc
    d = lat.d
    sym_cfg = _get(cfg, "symbol", "scenario", "gradient")
    if sym_cfg == "gradient":
        sym = gradient_symbol(d)
    else:
        b = _complex_array(sym_cfg, "scenario.symbol")
        if b.ndim != 3 or b.shape[0] != d:
            raise ConfigError(f"scenario.symbol: expected shape ({d}, m, n), got {b.shape}")
        try:
            sym = make_symbol(b)
        except HomogError as exc:
            raise ConfigError(f"scenario.symbol: {exc}") from exc
    g = _field(_get(cfg, "g", "scenario"), "scenario.g", d)
    f = _field(cfg["f"], "scenario.f", d) if cfg.get("f") is not None else None
    if g.rows != sym.m:
        raise ConfigError(f"scenario.g: expected {sym.m}x{sym.m} coefficients")
    if f is not None and f.rows != sym.n:
        raise ConfigError(f"scenario.f: expected {sym.n}x{sym.n} coefficients")
    scan = cfg.get("scan", {})
    sc = Scenario(name, lat, sym, g, f, cutoff=cfg.get("cutoff"),
                  theta_count=cfg.get("theta_count"), t_count=int(scan.get("t_count", 24)),
                  eps_grid=tuple(scan.get("eps", (0.1, 0.05, 0.025))),
                  tau_grid=tuple(scan.get("tau", (1.0, 10.0, 100.0))),
                  s_grid=tuple(scan.get("s", (3.0,))),
                  expect=dict(cfg.get("expect", {})))
    return _check_fields(sc)


def load_scenario(spec: str, **params) -> Scenario:
    """Builtin name (with optional keyword parameters) or path to a JSON config."""
    if spec in BUILTINS:
        try:
            return _check_fields(BUILTINS[spec](**params))
        except TypeError as exc:
            raise ConfigError(f"{spec}: {exc}") from exc
    p = Path(spec)
    if not p.exists():
        raise ConfigError(f"unknown scenario {spec!r} (builtins: {', '.join(BUILTINS)})")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return scenario_from_dict(cfg, p.stem)
