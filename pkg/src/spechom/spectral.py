"""Dense spectral oracle on small periodic cells.

Assembles mu + L as a dense symmetric matrix, diagonalizes it, and
projects the drift field onto the eigenbasis.  Every estimator of this
package is an integral against the resulting discrete measure, so the
module doubles as the exact reference for all identity checks:

    ahom            = <xi.A xi> - sum_i w_i / lambda_i
    order-k value   = <xi.A xi> - sum_i w_i P_k(mu, lambda_i) / q_k(mu, lambda_i)
    order-k bias    = 2^(k(k-1)) mu^(2k) sum_i w_i / (lambda_i q_k(mu, lambda_i))

with q_k(mu, lambda) = prod_j (2^j mu + lambda)^2 and P_k the polynomial
part of q_k / lambda.  P_k is evaluated through its expanded form, whose
lambda-coefficients are positive integers, so no cancellation occurs even
for lambda far below mu; sums use math.fsum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import OversizeCellError, SpecHomError
from .lattice import Environment, Topology, local_drift
from .util import fit_loglog_slope

__all__ = [
    "MAX_DENSE_SITES",
    "assemble_dense",
    "SpectralMeasure",
    "spectral_measure",
    "ahom_spectral",
    "a_mu_k_spectral",
    "systematic_error_spectral",
    "corrector_l2_spectral",
    "ErrorCurve",
    "systematic_error_curve",
    "pk_lambda_coefficients",
]

MAX_DENSE_SITES = 4096

# Relative caps for identifying the kernel mode of the dense operator.
_ZERO_EIGENVALUE_CAP = 1e-8
_ZERO_WEIGHT_CAP = 1e-10


def assemble_dense(env: Environment, mu: float = 0.0) -> np.ndarray:
    """Dense symmetric matrix of mu + L on a torus, in the canonical site basis.

    Assembled edge by edge, so the matrix equals its transpose bit-exactly
    and rows sum to zero at mu = 0.
    """
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    if env.topology is not Topology.TORUS:
        raise ValueError("the dense oracle requires a torus")
    n = env.nsites
    if n > MAX_DENSE_SITES:
        raise OversizeCellError(f"cell has {n} sites, dense cap is {MAX_DENSE_SITES}")
    index = np.arange(n).reshape(env.extents)
    mat = np.zeros((n, n))
    src = index.ravel()
    for i in range(env.dim):
        w = env.conductances[..., i].ravel()
        nb = np.roll(index, -1, axis=i).ravel()
        np.add.at(mat, (src, src), w)
        np.add.at(mat, (nb, nb), w)
        np.add.at(mat, (src, nb), -w)
        np.add.at(mat, (nb, src), -w)
    if mu != 0.0:
        mat[np.diag_indices(n)] += mu
    return mat


@dataclass(frozen=True)
class SpectralMeasure:
    """Eigenvalues of L on a torus and the squared drift projections.

    eigenvalues are ascending; weights[i] is the squared site-average
    inner product of the drift with the i-th eigenvector (orthonormal in
    the site-average inner product), so the weights sum to the site
    average of drift^2.  Entry 0 is the kernel (constants); its weight
    must be negligible because the drift has zero mean.
    """

    eigenvalues: np.ndarray
    weights: np.ndarray
    drift_square_mean: float

    def __post_init__(self):
        self.eigenvalues.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def zero_mode_weight(self) -> float:
        return float(self.weights[0])

    @property
    def gap(self) -> float:
        """Smallest positive eigenvalue of L."""
        return float(self.eigenvalues[1])

    def positive(self) -> tuple[np.ndarray, np.ndarray]:
        """(eigenvalues, weights) with the kernel mode removed."""
        return self.eigenvalues[1:], self.weights[1:]

    def validate(self) -> None:
        scale = float(self.eigenvalues[-1])
        if abs(float(self.eigenvalues[0])) > _ZERO_EIGENVALUE_CAP * scale:
            raise SpecHomError(
                f"kernel eigenvalue {self.eigenvalues[0]!r} is not negligible"
            )
        if self.drift_square_mean > 0 and self.zero_mode_weight > _ZERO_WEIGHT_CAP * self.drift_square_mean:
            raise SpecHomError(
                f"drift carries weight {self.zero_mode_weight!r} on the kernel mode"
            )


def spectral_measure(env: Environment, xi) -> SpectralMeasure:
    """Diagonalize L on a torus and project the drift onto the eigenbasis."""
    if env.topology is not Topology.TORUS:
        raise ValueError("the spectral oracle requires a torus")
    if env.nsites < 2:
        raise ValueError("the spectral oracle needs at least two sites")
    xi = np.asarray(xi, dtype=np.float64)
    mat = assemble_dense(env, 0.0)
    eigenvalues, vectors = np.linalg.eigh(mat)
    drift = local_drift(env, xi).ravel()
    # Eigenvectors are unit in the plain dot product; dividing the squared
    # projections by n converts to the site-average convention.
    weights = (vectors.T @ drift) ** 2 / env.nsites
    measure = SpectralMeasure(eigenvalues, weights, float(np.mean(drift**2)))
    measure.validate()
    return measure


def ahom_spectral(measure: SpectralMeasure, axi_average: float) -> float:
    """Homogenized coefficient from the measure: <xi.A xi> - sum w/lambda."""
    lam, w = measure.positive()
    return axi_average - math.fsum(wi / li for li, wi in zip(lam, w))


def corrector_l2_spectral(measure: SpectralMeasure, mu: float) -> float:
    """Mean square of the corrector at zero-order term mu: sum w/(mu+lambda)^2."""
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    lam, w = measure.positive()
    return math.fsum(wi / (mu + li) ** 2 for li, wi in zip(lam, w))


@lru_cache(maxsize=None)
def pk_lambda_coefficients(k: int) -> tuple[int, ...]:
    """Integer coefficients q_m of prod_{j<k} (lambda + 2^j mu)^2.

    The product equals sum_m q_m mu^(2k-m) lambda^m with q_m > 0 and
    q_0 = 2^(k(k-1)); dropping q_0 and dividing by lambda gives the
    polynomial part exactly, term by term, with no cancellation.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    poly = [1]
    for j in range(k):
        c = 2**j
        factor = (c * c, 2 * c, 1)
        out = [0] * (len(poly) + 2)
        for m, q in enumerate(poly):
            for s, f in enumerate(factor):
                out[m + s] += q * f
        poly = out
    assert poly[0] == 2 ** (k * (k - 1))
    return tuple(poly)


def _pk_over_product(mu: float, lam: float, k: int, q: tuple[int, ...]) -> float:
    """P_k(mu, lambda) / prod_j (2^j mu + lambda)^2, cancellation-free."""
    numer = math.fsum(q[m] * mu ** (2 * k - m) * lam ** (m - 1) for m in range(1, 2 * k + 1))
    denom = 1.0
    for j in range(k):
        denom *= (2**j * mu + lam) ** 2
    return numer / denom


def a_mu_k_spectral(
    measure: SpectralMeasure, axi_average: float, mu: float, k: int
) -> float:
    """Order-k estimator value evaluated directly against the measure."""
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    measure.validate()
    q = pk_lambda_coefficients(k)
    lam, w = measure.positive()
    integral = math.fsum(
        wi * _pk_over_product(mu, float(li), k, q) for li, wi in zip(lam, w) if wi != 0.0
    )
    return axi_average - integral


def systematic_error_spectral(measure: SpectralMeasure, mu: float, k: int) -> float:
    """Exact order-k bias: 2^(k(k-1)) mu^(2k) sum w / (lambda prod (2^j mu + lambda)^2).

    This is the exact difference between the order-k estimator value and
    the homogenized coefficient; evaluating it directly (all terms
    positive) resolves biases far below the rounding floor of the two
    values' subtraction.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    measure.validate()
    lam, w = measure.positive()
    scale = 2.0 ** (k * (k - 1)) * mu ** (2 * k)

    def term(li: float, wi: float) -> float:
        denom = li
        for j in range(k):
            denom *= (2**j * mu + li) ** 2
        return wi / denom

    return scale * math.fsum(term(float(li), wi) for li, wi in zip(lam, w) if wi != 0.0)


@dataclass(frozen=True)
class ErrorCurve:
    """Systematic error sampled over a grid of mu, with a log-log slope fit."""

    k: int
    points: tuple[tuple[float, float], ...]
    slope: float
    slope_stderr: float


def systematic_error_curve(env: Environment, xi, k: int, mu_grid) -> ErrorCurve:
    """Bias of the order-k estimator at each mu, plus the fitted decay rate.

    Every error is nonnegative by construction.  The slope is fitted on
    the strictly positive errors; it is nan when fewer than two remain
    (homogeneous environments have identically zero error).
    """
    mu_values = [float(m) for m in np.atleast_1d(np.asarray(mu_grid, dtype=np.float64))]
    if len(mu_values) == 0:
        raise ValueError("mu grid must not be empty")
    if any(m <= 0 for m in mu_values):
        raise ValueError("mu grid entries must be positive")
    measure = spectral_measure(env, xi)
    points = tuple((m, systematic_error_spectral(measure, m, k)) for m in mu_values)
    xs = [m for m, e in points if e > 0.0]
    ys = [e for _, e in points if e > 0.0]
    if len(xs) >= 2:
        slope, stderr = fit_loglog_slope(xs, ys)
    else:
        slope, stderr = math.nan, math.nan
    return ErrorCurve(k, points, slope, stderr)
