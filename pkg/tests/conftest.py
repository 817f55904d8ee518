"""Shared test fixtures and independent oracles.

The dense oracles here are built from scratch (basis-vector columns of
the stencil, plain LAPACK solves) so they stay independent of the
package's own assembly and CG paths.
"""
from __future__ import annotations

import numpy as np
import pytest

from spechom.lattice import Environment, Topology, environment_from_conductances
from spechom.solver import _pin_shell
from spechom.lattice import apply_operator


def random_environment(
    extents, seed, lo: float = 1.0, hi: float = 10.0, topology: Topology = Topology.TORUS
) -> Environment:
    """Uniform(lo, hi) conductances from a plain seeded generator."""
    rng = np.random.default_rng(seed)
    extents = tuple(extents)
    cond = lo + (hi - lo) * rng.random(extents + (len(extents),))
    return environment_from_conductances(cond, topology, bounds=(lo, hi))


def random_field(env: Environment, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(env.extents)


def dense_from_stencil(env: Environment, mu: float) -> np.ndarray:
    """Matrix of mu + L on a torus, one stencil application per basis vector."""
    n = env.nsites
    mat = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        mat[:, j] = apply_operator(env, mu, e.reshape(env.extents)).ravel()
    return mat


def dense_dirichlet_from_stencil(env: Environment, mu: float) -> tuple[np.ndarray, np.ndarray]:
    """(matrix, interior index) of the pinned-shell box problem."""
    n = env.nsites
    inner = np.zeros(env.extents, dtype=bool)
    inner[tuple(slice(1, m - 1) for m in env.extents)] = True
    idx = np.flatnonzero(inner.ravel())
    cols = []
    for j in idx:
        e = np.zeros(n)
        e[j] = 1.0
        col = _pin_shell(env, apply_operator(env, mu, e.reshape(env.extents))).ravel()
        cols.append(col[idx])
    return np.array(cols).T, idx


@pytest.fixture
def env44():
    return random_environment((4, 4), seed=42)
