"""Corrector solves on boxes and tori.

Solves (mu + L) phi = drift with L = -div*(A grad) by preconditioned
conjugate gradient on the matrix-free stencil, plus the exact periodic
cell problem (mu = 0 on the mean-zero subspace) that defines the
homogenized coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConvergenceError
from .lattice import (
    Environment,
    Topology,
    _shift,
    apply_operator,
    energy_average,
    local_drift,
    uniform_mask,
)

__all__ = [
    "Preconditioner",
    "SolveConfig",
    "DEFAULT_CONFIG",
    "CorrectorSet",
    "solve_modified_corrector",
    "solve_corrector_set",
    "solve_exact_corrector",
    "exact_homogenized",
]


class Preconditioner(Enum):
    NONE = "none"
    DIAGONAL = "diagonal"


@dataclass(frozen=True)
class SolveConfig:
    """Iterative-solve controls.

    max_iterations defaults to 50*sqrt(#sites) + 1000 when left as None.
    """

    rel_tolerance: float = 1e-12
    max_iterations: int | None = None
    preconditioner: Preconditioner = Preconditioner.DIAGONAL

    def __post_init__(self):
        if not (0.0 < self.rel_tolerance < 1.0):
            raise ValueError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def iteration_cap(self, nsites: int) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return int(50 * math.sqrt(nsites)) + 1000


DEFAULT_CONFIG = SolveConfig()


@dataclass(frozen=True)
class CorrectorSet:
    """Correctors phi at the dyadic ladder mu, 2 mu, ..., 2^(k-1) mu.

    fields[i] solves (2^i mu + L) phi = drift; residuals[i] is the achieved
    relative residual of that solve.
    """

    mu: float
    xi: tuple[float, ...]
    fields: tuple[np.ndarray, ...]
    residuals: tuple[float, ...]
    iterations: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.fields)

    @property
    def max_residual(self) -> float:
        return max(self.residuals)

    def truncated(self, k: int) -> "CorrectorSet":
        """The first k ladder levels as a set of their own."""
        if not (1 <= k <= self.k):
            raise ValueError(f"cannot truncate a {self.k}-level set to k={k}")
        return CorrectorSet(
            self.mu, self.xi, self.fields[:k], self.residuals[:k], self.iterations[:k]
        )

    def shifted(self, levels: int) -> "CorrectorSet":
        """Drop the lowest `levels` ladder entries; the base becomes 2^levels mu."""
        if not (0 <= levels < self.k):
            raise ValueError(f"cannot shift a {self.k}-level set by {levels}")
        return CorrectorSet(
            self.mu * 2**levels,
            self.xi,
            self.fields[levels:],
            self.residuals[levels:],
            self.iterations[levels:],
        )


def _diagonal(env: Environment, mu: float) -> np.ndarray:
    """Diagonal of mu + L: mu + sum_i (omega_{x,x+e_i} + omega_{x-e_i,x})."""
    diag = np.full(env.extents, mu)
    for i in range(env.dim):
        wi = env.conductances[..., i]
        diag += wi + _shift(wi, i, -1, env.topology)
    return diag


def _pcg(
    matvec,
    b: np.ndarray,
    x0: np.ndarray | None,
    target: float,
    max_iterations: int,
    inv_diag: np.ndarray | None,
    project: bool,
) -> tuple[np.ndarray, float, int, list[float]]:
    """Preconditioned CG; `target` is an absolute residual norm.

    The recurrence residual drives the iteration; whenever it claims
    convergence the true residual b - A x is checked, and the recursion is
    restarted from the best iterate if the claim does not hold.  Returns
    (solution, achieved residual norm, iterations, residual history at the
    verification points); the history is non-increasing because the best
    iterate so far is the one carried forward.
    """
    b = np.array(b, dtype=np.float64)
    if project:
        b -= b.mean()
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        if project:
            x -= x.mean()
        r = b - matvec(x)

    def precondition(res):
        z = res * inv_diag if inv_diag is not None else res.copy()
        if project:
            z -= z.mean()
        return z

    best_x = x.copy()
    best_norm = float(np.linalg.norm(r))
    history = [best_norm]
    if best_norm <= target:
        return best_x, best_norm, 0, history

    z = precondition(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    iterations = 0
    while iterations < max_iterations:
        Ap = matvec(p)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0.0 or not math.isfinite(pAp):
            break
        step = rz / pAp
        x += step * p
        r -= step * Ap
        iterations += 1
        if float(np.linalg.norm(r)) <= target or iterations == max_iterations:
            # Verify against the true residual before trusting the recurrence.
            if project:
                x -= x.mean()
            r_true = b - matvec(x)
            if project:
                r_true -= r_true.mean()
            true_norm = float(np.linalg.norm(r_true))
            if true_norm < best_norm:
                best_norm = true_norm
                best_x = x.copy()
            history.append(best_norm)
            if best_norm <= target or iterations >= max_iterations:
                return best_x, best_norm, iterations, history
            # Restart from the best iterate with the exact residual.
            x = best_x.copy()
            r = b - matvec(x)
            if project:
                r -= r.mean()
            z = precondition(r)
            p = z.copy()
            rz = float(np.vdot(r, z))
            continue
        z = precondition(r)
        rz_new = float(np.vdot(r, z))
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p

    return best_x, best_norm, iterations, history


def _inv_diag(env: Environment, mu: float, config: SolveConfig) -> np.ndarray | None:
    if config.preconditioner is Preconditioner.DIAGONAL:
        return 1.0 / _diagonal(env, mu)
    return None


def _pin_shell(env: Environment, field: np.ndarray) -> np.ndarray:
    """Copy of a box field with the boundary shell forced to zero."""
    inner = tuple(slice(1, n - 1) for n in env.extents)
    out = np.zeros_like(field)
    out[inner] = field[inner]
    return out


def _dirichlet_problem(env: Environment, mu: float, drift: np.ndarray):
    """(matvec, rhs) of the corrector problem at zero-order term mu.

    On a torus this is the plain stencil.  On a box the unknowns are the
    strict interior of the stored array: the outermost layer carries the
    homogeneous Dirichlet values, so its entries are pinned to zero in the
    right-hand side and in every operator application.
    """
    if env.topology is Topology.TORUS:
        return (lambda v: apply_operator(env, mu, v)), drift
    if any(n < 3 for n in env.extents):
        raise ValueError("a box needs at least one interior site per axis")
    return (lambda v: _pin_shell(env, apply_operator(env, mu, v))), _pin_shell(env, drift)


def solve_modified_corrector(
    env: Environment, mu: float, xi, config: SolveConfig = DEFAULT_CONFIG
) -> np.ndarray:
    """Solve (mu + L) phi = div*(A xi) for mu > 0.

    The returned field satisfies ||(mu+L) phi - drift|| <= rel_tolerance
    * ||drift|| in the Euclidean norm.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return solve_corrector_set(env, mu, 1, xi, config).fields[0]


def solve_corrector_set(
    env: Environment, mu: float, k: int, xi, config: SolveConfig = DEFAULT_CONFIG
) -> CorrectorSet:
    """Solve the ladder (2^i mu + L) phi_i = drift for i = 0..k-1.

    On a box the solve is the homogeneous-Dirichlet problem of the strict
    interior (the stored shell stays zero).  Level i is warm-started from
    level i-1 (ladder neighbors are close), which keeps the solves
    deterministic and cheap.  A non-converging level raises
    ConvergenceError naming the failing level.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    xi = np.asarray(xi, dtype=np.float64)
    raw_drift = local_drift(env, xi)
    cap = config.iteration_cap(env.nsites)
    fields: list[np.ndarray] = []
    residuals: list[float] = []
    iterations: list[int] = []
    drift = None
    for i in range(k):
        level_mu = mu * 2**i
        matvec, rhs = _dirichlet_problem(env, level_mu, raw_drift)
        if drift is None:
            drift = rhs
            drift_norm = float(np.linalg.norm(drift))
        guess = fields[-1] if fields else None
        phi, achieved, iters, _ = _pcg(
            matvec,
            drift,
            guess,
            config.rel_tolerance * drift_norm,
            cap,
            _inv_diag(env, level_mu, config),
            project=False,
        )
        rel = achieved / drift_norm if drift_norm > 0 else 0.0
        if rel > config.rel_tolerance:
            raise ConvergenceError(
                f"corrector ladder level {i} (mu={level_mu}) did not converge", rel, iters
            )
        fields.append(phi)
        residuals.append(rel)
        iterations.append(iters)
    return CorrectorSet(mu, tuple(xi), tuple(fields), tuple(residuals), tuple(iterations))


def solve_exact_corrector(
    env: Environment, xi, config: SolveConfig = DEFAULT_CONFIG
) -> np.ndarray:
    """Solve L phi = div*(A xi) on the mean-zero subspace of a torus.

    The system is singular with kernel the constants; the right-hand side
    has zero mean, and every iterate is re-projected onto mean zero, so CG
    runs on a definite problem.
    """
    if env.topology is not Topology.TORUS:
        raise ValueError("the exact cell problem requires a torus")
    xi = np.asarray(xi, dtype=np.float64)
    drift = local_drift(env, xi)
    drift_norm = float(np.linalg.norm(drift))
    phi, achieved, iterations, _ = _pcg(
        lambda v: apply_operator(env, 0.0, v),
        drift,
        None,
        config.rel_tolerance * drift_norm,
        config.iteration_cap(env.nsites),
        _inv_diag(env, 0.0, config),
        project=True,
    )
    rel = achieved / drift_norm if drift_norm > 0 else 0.0
    if rel > config.rel_tolerance:
        raise ConvergenceError("periodic cell solve did not converge", rel, iterations)
    return phi


def exact_homogenized(env: Environment, xi, config: SolveConfig = DEFAULT_CONFIG) -> float:
    """Homogenized coefficient xi . A_hom xi of a periodic cell.

    Computed as the cell average of (xi + grad phi) . A (xi + grad phi)
    with phi the exact periodic corrector; exact up to solver tolerance
    and machine precision.
    """
    xi = np.asarray(xi, dtype=np.float64)
    phi = solve_exact_corrector(env, xi, config)
    return energy_average(env, xi, phi, phi, uniform_mask(env))
