"""Shared polynomial basis over the underlyings and its analytic derivatives."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

FAMILIES = ("monomial", "chebyshev")


@dataclass(frozen=True)
class BasisSpec:
    """Tensor-product polynomial basis.

    Each underlying ``b`` is first normalised, ``z_b = (x_b - center_b) /
    scale_b``, then basis functions are products of one-dimensional
    polynomials ``p_e(z_b)`` with ``e <= max_degree[b]`` and total degree at
    most ``max_total_degree``. Without ``cross_terms`` only products
    involving a single underlying are kept.

    Functions are ordered by total degree, then lexicographically on the
    exponent tuple, so the constant function is always index 0.
    """

    max_degree: tuple[int, ...]
    family: str = "monomial"
    cross_terms: bool = True
    max_total_degree: int | None = None
    center: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None

    def __post_init__(self):
        deg = tuple(int(d) for d in self.max_degree)
        object.__setattr__(self, "max_degree", deg)
        if not deg or min(deg) < 0:
            raise ConfigurationError("basis degrees must be >= 0")
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown basis family {self.family!r}")
        n = len(deg)
        if self.max_total_degree is None:
            object.__setattr__(self, "max_total_degree", max(deg))
        if self.max_total_degree < 0:
            raise ConfigurationError("max_total_degree must be >= 0")
        center = tuple(float(c) for c in (self.center or (0.0,) * n))
        scale = tuple(float(s) for s in (self.scale or (1.0,) * n))
        if len(center) != n or len(scale) != n or min(scale) <= 0:
            raise ConfigurationError("center/scale must match the underlyings, scale > 0")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def quadratic(cls, n_underlyings: int = 1, **kw) -> "BasisSpec":
        return cls(max_degree=(2,) * n_underlyings, max_total_degree=2, **kw)

    @property
    def n_underlyings(self) -> int:
        return len(self.max_degree)

    @cached_property
    def exponents(self) -> tuple[tuple[int, ...], ...]:
        ranges = [range(d + 1) for d in self.max_degree]
        out = []
        for e in itertools.product(*ranges):
            if sum(e) > self.max_total_degree:
                continue
            if not self.cross_terms and sum(1 for v in e if v) > 1:
                continue
            out.append(e)
        out.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
        return tuple(out)

    @property
    def size(self) -> int:
        return len(self.exponents)

    def as_dict(self) -> dict:
        return {
            "family": self.family, "max_degree": list(self.max_degree),
            "cross_terms": self.cross_terms, "max_total_degree": self.max_total_degree,
            "center": list(self.center), "scale": list(self.scale),
        }

    @classmethod
    def from_dict(cls, data, n_underlyings: int | None = None) -> "BasisSpec":
        deg = data.get("max_degree", 2)
        if isinstance(deg, int):
            deg = [deg] * (n_underlyings or 1)
        return cls(
            max_degree=tuple(deg), family=data.get("family", "monomial"),
            cross_terms=data.get("cross_terms", True),
            max_total_degree=data.get("max_total_degree"),
            center=tuple(data["center"]) if data.get("center") is not None else None,
            scale=tuple(data["scale"]) if data.get("scale") is not None else None,
        )


def _tables_1d(family: str, z: np.ndarray, degree: int, order: int):
    """Values and derivatives (in z) of p_0..p_degree at z."""
    shape = z.shape + (degree + 1,)
    p = np.zeros(shape)
    dp = np.zeros(shape)
    d2p = np.zeros(shape)
    p[..., 0] = 1.0
    if family == "monomial":
        for e in range(1, degree + 1):
            p[..., e] = p[..., e - 1] * z
        if order >= 1:
            for e in range(1, degree + 1):
                dp[..., e] = e * p[..., e - 1]
        if order >= 2:
            for e in range(2, degree + 1):
                d2p[..., e] = e * (e - 1) * p[..., e - 2]
        return p, dp, d2p
    if degree >= 1:
        p[..., 1] = z
        dp[..., 1] = 1.0
    for e in range(1, degree):
        p[..., e + 1] = 2.0 * z * p[..., e] - p[..., e - 1]
        dp[..., e + 1] = 2.0 * p[..., e] + 2.0 * z * dp[..., e] - dp[..., e - 1]
        d2p[..., e + 1] = 4.0 * dp[..., e] + 2.0 * z * d2p[..., e] - d2p[..., e - 1]
    return p, dp, d2p


def _normalised(spec: BasisSpec, states) -> np.ndarray:
    x = np.asarray(states, dtype=float)
    if x.ndim == 0 or x.shape[-1] != spec.n_underlyings:
        if spec.n_underlyings == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        else:
            raise ConfigurationError(
                f"state dimension {x.shape[-1] if x.ndim else 0} != {spec.n_underlyings}")
    return (x - np.asarray(spec.center)) / np.asarray(spec.scale)


def eval_basis(spec: BasisSpec, states) -> np.ndarray:
    """Basis values at ``states`` of shape ``(..., U)``; returns ``(..., L)``.

    For a single underlying a plain array of scalars is also accepted.
    """
    z = _normalised(spec, states)
    tabs = [_tables_1d(spec.family, z[..., b], d, 0)[0] for b, d in enumerate(spec.max_degree)]
    out = np.empty(z.shape[:-1] + (spec.size,))
    for l, e in enumerate(spec.exponents):
        v = tabs[0][..., e[0]]
        for b in range(1, spec.n_underlyings):
            v = v * tabs[b][..., e[b]]
        out[..., l] = v
    return out


def basis_derivatives(spec: BasisSpec, states, order: int = 1) -> np.ndarray:
    """Exact derivatives of every basis function in every underlying.

    Returns the gradient ``(..., L, U)`` for ``order=1`` and the Hessian
    ``(..., L, U, U)`` for ``order=2``.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    z = _normalised(spec, states)
    n_u = spec.n_underlyings
    inv = 1.0 / np.asarray(spec.scale)
    tabs = [_tables_1d(spec.family, z[..., b], d, order) for b, d in enumerate(spec.max_degree)]
    lead = z.shape[:-1]
    if order == 1:
        out = np.empty(lead + (spec.size, n_u))
        for l, e in enumerate(spec.exponents):
            for b in range(n_u):
                v = tabs[b][1][..., e[b]] * inv[b]
                for c in range(n_u):
                    if c != b:
                        v = v * tabs[c][0][..., e[c]]
                out[..., l, b] = v
        return out
    out = np.empty(lead + (spec.size, n_u, n_u))
    for l, e in enumerate(spec.exponents):
        for b in range(n_u):
            for c in range(b, n_u):
                if b == c:
                    v = tabs[b][2][..., e[b]] * inv[b] * inv[b]
                else:
                    v = tabs[b][1][..., e[b]] * tabs[c][1][..., e[c]] * inv[b] * inv[c]
                for d in range(n_u):
                    if d != b and d != c:
                        v = v * tabs[d][0][..., e[d]]
                out[..., l, b, c] = v
                out[..., l, c, b] = v
    return out
