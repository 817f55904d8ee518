"""Estimator coefficients, filters/masks, and estimator assembly.

The k-th order estimator of the homogenized coefficient combines the
energy of the base corrector with weighted products of the ladder
correctors phi at zero-order terms mu, 2 mu, ..., 2^(k-1) mu:

    value = <<(xi + grad phi_mu) . A (xi + grad phi_mu)>>
            + mu * sum_i eta[i] <<phi_i^2>>
            + mu * sum_{i<j} nu[i][j] <<phi_i phi_j>>

where <<.>> is a masked spatial average.  The coefficient tables c, a,
eta, nu are generated by exact rational recursions and converted to
floating point only when the estimator is assembled; the integer factors
involved grow like 2^(k^2), hence the practical cap on k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import MaskError
from .lattice import (
    Environment,
    axis_coordinates,
    domain_extents,
    energy_average,
    product_average,
    uniform_mask,
)
from .solver import DEFAULT_CONFIG, CorrectorSet, SolveConfig, solve_corrector_set

__all__ = [
    "MAX_ORDER",
    "SchemeCoefficients",
    "coefficients",
    "scaled_dmuk",
    "Filter",
    "filter_from_name",
    "DEFAULT_FILTER",
    "build_mask",
    "EstimateReport",
    "estimate",
    "estimate_from_correctors",
]

# 2^(k^2)-sized integers appear in the recursions; beyond this order the
# tables are exact but the estimator itself is numerically pointless.
MAX_ORDER = 12


@dataclass(frozen=True)
class SchemeCoefficients:
    """Exact rational coefficient tables of the order-k estimator.

    c[m-1] is the m-th ladder contraction factor (c_1 = 1, and
    c_{m+1} = 1/(2/c_m + 1), i.e. c_m = 1/(2^m - 1)); a[i] weights
    phi at 2^i mu inside the combined ladder field; eta[i] and
    nu[(i,j)] weight the squared and mixed corrector averages.
    """

    k: int
    c: tuple[Fraction, ...]
    a: tuple[Fraction, ...]
    eta: tuple[Fraction, ...]
    nu: Mapping[tuple[int, int], Fraction]

    def nu_pairs(self) -> list[tuple[int, int]]:
        """Index pairs (i, j), i < j, in deterministic lexicographic order."""
        return sorted(self.nu)


@lru_cache(maxsize=None)
def coefficients(k: int) -> SchemeCoefficients:
    """Exact coefficient tables for the order-k estimator, 1 <= k <= MAX_ORDER."""
    if k < 1:
        raise ValueError(f"order k must be >= 1, got {k}")
    if k > MAX_ORDER:
        raise ValueError(f"order k={k} exceeds the practical cap {MAX_ORDER}")
    c = [Fraction(1)]
    a = [Fraction(1)]
    eta = [Fraction(0)]
    nu: dict[tuple[int, int], Fraction] = {}
    for m in range(1, k):
        cm = c[-1]
        half_pow = Fraction(1, 2 ** (m - 1))
        a_next = [cm * a[0]]
        a_next += [cm * a[i] - half_pow * cm * a[i - 1] for i in range(1, m)]
        a_next.append(-half_pow * cm * a[m - 1])
        eta_next = [
            eta[i] + (2 ** (m * (m - 1) + i) - 2 ** (m * m + 1)) * a_next[i] ** 2
            for i in range(m)
        ]
        eta_next.append(-(2 ** (m * m)) * a_next[m] ** 2)
        nu_next = {
            (i, j): nu[(i, j)]
            + (2 ** (m * (m - 1)) * (2**i + 2**j) - 2 ** (m * m + 2)) * a_next[i] * a_next[j]
            for (i, j) in nu
        }
        for i in range(m):
            nu_next[(i, m)] = (2 ** (m * (m - 1) + i) - 3 * 2 ** (m * m)) * a_next[i] * a_next[m]
        c.append(1 / (2 / cm + 1))
        a, eta, nu = a_next, eta_next, nu_next
    return SchemeCoefficients(k, tuple(c), tuple(a), tuple(eta), MappingProxyType(nu))


def scaled_dmuk(correctors: CorrectorSet, coeffs: SchemeCoefficients) -> np.ndarray:
    """The combined ladder field sum_i a[i] * phi_{2^i mu}.

    This is mu^(k-1) times the order-k resolvent-product field; the scaled
    form is the stored object so no division by small powers of mu occurs.
    """
    if correctors.k != coeffs.k:
        raise ValueError(
            f"corrector set has {correctors.k} levels but coefficients are order {coeffs.k}"
        )
    out = np.zeros_like(correctors.fields[0])
    for ai, phi in zip(coeffs.a, correctors.fields):
        out += float(ai) * phi
    return out


@dataclass(frozen=True)
class Filter:
    """Averaging profile chi on (-1, 1), zero outside.

    kind "polynomial" uses chi(t) proportional to (1 - t^2)^p, which has p
    vanishing derivatives at the endpoints; kind "smooth_bump" uses
    exp(-1/(1 - t^2)), which has them all (infinite order).  Normalization
    is deferred to mask construction.
    """

    kind: str
    p: int | None = None

    def __post_init__(self):
        if self.kind == "polynomial":
            if self.p is None or self.p < 0:
                raise ValueError("polynomial filter needs an order p >= 0")
        elif self.kind == "smooth_bump":
            if self.p is not None:
                raise ValueError("smooth_bump filter takes no order")
        else:
            raise ValueError(f"unknown filter kind {self.kind!r}")

    @classmethod
    def polynomial(cls, p: int) -> "Filter":
        return cls("polynomial", int(p))

    @classmethod
    def smooth_bump(cls) -> "Filter":
        return cls("smooth_bump")

    @property
    def name(self) -> str:
        return "smoothbump" if self.kind == "smooth_bump" else f"poly:{self.p}"

    def profile(self, t: np.ndarray) -> np.ndarray:
        """Unnormalized profile values; exactly zero for |t| >= 1."""
        t = np.asarray(t, dtype=np.float64)
        inside = np.abs(t) < 1.0
        out = np.zeros_like(t)
        if self.kind == "polynomial":
            out[inside] = (1.0 - t[inside] ** 2) ** self.p
        else:
            out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
        return out


DEFAULT_FILTER = Filter.smooth_bump()


def filter_from_name(name: str) -> Filter:
    """Parse "smoothbump" or "poly:<p>"."""
    name = name.strip().lower()
    if name in ("smoothbump", "smooth_bump", "bump"):
        return Filter.smooth_bump()
    if name.startswith("poly:"):
        return Filter.polynomial(int(name.split(":", 1)[1]))
    raise ValueError(f"unknown filter {name!r} (expected 'smoothbump' or 'poly:<p>')")


def build_mask(filt: Filter, length: float, env: Environment) -> np.ndarray:
    """Product mask prod_i chi(x_i / L) over lattice points strictly inside (-L, L)^d.

    The mask is normalized so its lattice sum is exactly one and is zero
    outside the open cube.  Raises MaskError if the cube does not fit in
    the geometry (the box or the centered torus coordinates).
    """
    if length <= 0:
        raise MaskError(f"mask half-width must be positive, got {length}")
    coords = axis_coordinates(env)
    reach = math.ceil(length) - 1
    mask = np.ones(env.extents)
    for axis, c in enumerate(coords):
        if reach > c.max() or -reach < c.min():
            raise MaskError(
                f"cube (-{length}, {length}) does not fit along axis {axis} "
                f"(coordinates span [{c.min()}, {c.max()}])"
            )
        vals = filt.profile(c / length)
        shape = [1] * env.dim
        shape[axis] = env.extents[axis]
        mask = mask * vals.reshape(shape)
    total = float(mask.sum())
    if total <= 0.0:
        raise MaskError("mask has empty support")
    return mask / total


@dataclass(frozen=True)
class EstimateReport:
    """One evaluated estimator with its three term groups and diagnostics."""

    mu: float
    k: int
    side: int
    length: float | None
    filter_name: str
    xi: tuple[float, ...]
    value: float
    energy_term: float
    eta_term: float
    nu_term: float
    max_residual: float
    mask_sum: float
    iterations: tuple[int, ...]

    CSV_HEADER = "mu,k,R,L,filter,xi,estimate,energy_term,eta_term,nu_term,max_residual"

    def _length_str(self) -> str:
        return "full" if self.length is None else f"{self.length:.17g}"

    def key_value_block(self) -> str:
        lines = [
            f"mu = {self.mu:.17g}",
            f"k = {self.k}",
            f"R = {self.side}",
            f"L = {self._length_str()}",
            f"filter = {self.filter_name}",
            "xi = " + ";".join(f"{v:.17g}" for v in self.xi),
            f"estimate = {self.value:.17g}",
            f"energy_term = {self.energy_term:.17g}",
            f"eta_term = {self.eta_term:.17g}",
            f"nu_term = {self.nu_term:.17g}",
            f"max_residual = {self.max_residual:.17g}",
            f"mask_sum = {self.mask_sum:.17g}",
            "iterations = " + ";".join(str(n) for n in self.iterations),
        ]
        return "\n".join(lines)

    def csv_row(self) -> str:
        xi = ";".join(f"{v:.17g}" for v in self.xi)
        return (
            f"{self.mu:.17g},{self.k},{self.side},{self._length_str()},{self.filter_name},"
            f"{xi},{self.value:.17g},{self.energy_term:.17g},{self.eta_term:.17g},"
            f"{self.nu_term:.17g},{self.max_residual:.17g}"
        )


def estimate_from_correctors(
    env: Environment,
    correctors: CorrectorSet,
    k: int,
    mask: np.ndarray | None,
    length: float | None,
    filter_name: str,
) -> EstimateReport:
    """Assemble the order-k estimator from an already-solved corrector set.

    Only the first k ladder levels are used, so one deep set can serve
    several orders.  mask=None averages uniformly over the whole geometry.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if correctors.k < k:
        raise ValueError(f"need {k} corrector levels, have {correctors.k}")
    corrs = correctors.truncated(k)
    coeffs = coefficients(k)
    if mask is None:
        mask = uniform_mask(env)
    mask_sum = float(mask.sum())
    mu = corrs.mu
    xi = np.asarray(corrs.xi)
    energy = energy_average(env, xi, corrs.fields[0], corrs.fields[0], mask)
    eta_term = mu * math.fsum(
        float(coeffs.eta[i]) * product_average(corrs.fields[i], corrs.fields[i], mask)
        for i in range(k)
    )
    nu_term = mu * math.fsum(
        float(coeffs.nu[(i, j)]) * product_average(corrs.fields[i], corrs.fields[j], mask)
        for (i, j) in coeffs.nu_pairs()
    )
    return EstimateReport(
        mu=mu,
        k=k,
        side=max(domain_extents(env)),
        length=length,
        filter_name=filter_name,
        xi=corrs.xi,
        value=energy + eta_term + nu_term,
        energy_term=energy,
        eta_term=eta_term,
        nu_term=nu_term,
        max_residual=corrs.max_residual,
        mask_sum=mask_sum,
        iterations=corrs.iterations,
    )


def estimate(
    env: Environment,
    mu: float,
    k: int,
    xi,
    length: float | None = None,
    filt: Filter = DEFAULT_FILTER,
    config: SolveConfig = DEFAULT_CONFIG,
) -> EstimateReport:
    """Solve the corrector ladder and evaluate the order-k estimator.

    With length=None the average is uniform over the entire geometry (the
    no-boundary variant on a torus); otherwise the mask of `filt` with
    half-width `length` is used and must fit inside the geometry.  The
    value is the quadratic form at xi, which is conventionally a unit
    vector (see unit_direction).
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if length is not None and length > max(domain_extents(env)):
        raise ValueError(f"averaging width L={length} exceeds the geometry side")
    mask = None if length is None else build_mask(filt, length, env)
    corrs = solve_corrector_set(env, mu, k, xi, config)
    name = filt.name if length is not None else "uniform"
    return estimate_from_correctors(env, corrs, k, mask, length, name)
