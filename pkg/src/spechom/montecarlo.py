"""I.i.d. conductance sampling and Monte Carlo variance studies.

Environments are drawn edge-by-edge from a product law using the Philox
counter-based generator keyed by (seed, stream_index): a sample is a pure
function of its key, so workers can draw in any order, in parallel, and
reproduce bit-identically.  The variance study runs the masked estimator
over many samples and sizes and fits the decay of the sample variance.
"""
from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConvergenceError
from .lattice import Environment, Topology, homogeneous_environment
from .scheme import DEFAULT_FILTER, Filter, build_mask, estimate_from_correctors
from .solver import DEFAULT_CONFIG, SolveConfig, solve_corrector_set
from .util import fit_loglog_slope

__all__ = [
    "TwoPoint",
    "Uniform",
    "EnvironmentLaw",
    "parse_distribution",
    "sample_environment",
    "ScalingRule",
    "parse_scaling_rule",
    "SampleRecord",
    "SizeSummary",
    "StudyResult",
    "variance_study",
    "write_samples_csv",
    "write_summary_csv",
]

# Torus side per averaging half-width L: the mask support is the open cube
# (-L, L)^d, so the periodic proxy for the whole-lattice corrector needs a
# torus of side at least 2L.
TORUS_SIDE_FACTOR = 2


@dataclass(frozen=True)
class TwoPoint:
    """Edge law taking value a with probability prob_a, else b."""

    a: float
    b: float
    prob_a: float

    def __post_init__(self):
        if not (0.0 < self.a <= self.b):
            raise ValueError(f"need 0 < a <= b, got ({self.a}, {self.b})")
        if not (0.0 <= self.prob_a <= 1.0):
            raise ValueError(f"prob_a must lie in [0, 1], got {self.prob_a}")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.a, self.b

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        return np.where(u < self.prob_a, self.a, self.b)

    def spec(self) -> str:
        return f"twopoint:{self.a!r}:{self.b!r}:{self.prob_a!r}"


@dataclass(frozen=True)
class Uniform:
    """Edge law uniform on [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 < self.lo <= self.hi):
            raise ValueError(f"need 0 < lo <= hi, got ({self.lo}, {self.hi})")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.lo, self.hi

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * u

    def spec(self) -> str:
        return f"uniform:{self.lo!r}:{self.hi!r}"


Distribution = TwoPoint | Uniform


def parse_distribution(text: str) -> Distribution:
    """Parse "twopoint:a:b:prob_a" or "uniform:lo:hi"."""
    parts = text.strip().lower().split(":")
    if parts[0] == "twopoint" and len(parts) == 4:
        return TwoPoint(float(parts[1]), float(parts[2]), float(parts[3]))
    if parts[0] == "uniform" and len(parts) == 3:
        return Uniform(float(parts[1]), float(parts[2]))
    raise ValueError(f"cannot parse law {text!r} (expected twopoint:a:b:p or uniform:lo:hi)")


@dataclass(frozen=True)
class EnvironmentLaw:
    """A product edge law together with the dimension and the master seed."""

    distribution: Distribution
    dim: int
    seed: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")


def sample_environment(
    law: EnvironmentLaw,
    extents: tuple[int, ...],
    topology: Topology = Topology.TORUS,
    stream_index: int = 0,
) -> Environment:
    """Draw one environment; (seed, stream_index) fully determines it.

    The Philox key is the pair (seed, stream_index) and the counter runs
    over forward edges in canonical order, so the draw of edge (x, i)
    depends only on its canonical position, never on traversal order.
    """
    extents = tuple(int(n) for n in extents)
    if len(extents) != law.dim:
        raise ValueError(f"extents {extents} do not match law dimension {law.dim}")
    if not (0 <= stream_index < 2**64):
        raise ValueError("stream_index must fit in 64 bits")
    key = np.array([law.seed, stream_index], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    u = rng.random(extents + (law.dim,))
    cond = law.distribution.from_uniform(u)
    lo, hi = law.distribution.bounds
    return Environment(extents, topology, cond, lo, hi)


@dataclass(frozen=True)
class ScalingRule:
    """A rule of the form coeff * VAR^exponent (VAR is a size such as L or R)."""

    coeff: float
    exponent: float
    var: str

    def __call__(self, size: float) -> float:
        return self.coeff * size**self.exponent

    def spec(self) -> str:
        """Round-trip exact: parsing the result reproduces this rule."""
        if self.exponent == 0.0:
            return repr(self.coeff)
        return f"{self.coeff!r}*{self.var}^{self.exponent!r}"


_RULE_RE = re.compile(
    r"^\s*(?:(?P<coeff>[0-9.eE+-]+)\s*\*\s*)?(?P<var>[LR])"
    r"(?:\s*\^\s*(?P<exp>[0-9.eE+-]+)|\s*/\s*(?P<div>[0-9.eE+-]+))?\s*$"
)


def parse_scaling_rule(text: str, var: str = "L") -> ScalingRule:
    """Parse "c*L^e", "L^e", "R/3", "L", or a bare constant.

    `var` names the size variable for bare-constant rules and for echoing.
    """
    m = _RULE_RE.match(text)
    if m:
        coeff = float(m.group("coeff")) if m.group("coeff") else 1.0
        if m.group("div"):
            coeff /= float(m.group("div"))
            exponent = 1.0
        else:
            exponent = float(m.group("exp")) if m.group("exp") else 1.0
        return ScalingRule(coeff, exponent, m.group("var"))
    try:
        return ScalingRule(float(text), 0.0, var)
    except ValueError:
        raise ValueError(f"cannot parse scaling rule {text!r}") from None


@dataclass(frozen=True)
class SampleRecord:
    size: int
    sample_index: int
    stream_index: int
    estimate: float
    residual: float
    failed: bool = False


@dataclass(frozen=True)
class SizeSummary:
    size: int
    n: int
    mean: float
    variance: float
    stderr: float


@dataclass(frozen=True)
class StudyResult:
    """Per-sample estimates and per-size statistics for one estimator order."""

    k: int
    samples: tuple[SampleRecord, ...]
    summaries: tuple[SizeSummary, ...]
    variance_slope: float
    variance_slope_stderr: float
    flagged: int
    threads: int


def _summarize(size: int, values: Sequence[float]) -> SizeSummary:
    arr = np.asarray(values, dtype=np.float64)
    n = arr.size
    mean = float(arr.mean()) if n else math.nan
    variance = float(arr.var(ddof=1)) if n >= 2 else math.nan
    stderr = math.sqrt(variance / n) if n >= 2 else math.nan
    return SizeSummary(size, n, mean, variance, stderr)


def variance_study(
    law: EnvironmentLaw,
    mu_rule: ScalingRule,
    ks: int | Sequence[int],
    sizes: Sequence[int],
    samples_per_size: int,
    filt: Filter = DEFAULT_FILTER,
    xi=None,
    config: SolveConfig = DEFAULT_CONFIG,
    threads: int = 1,
) -> list[StudyResult]:
    """Masked-estimator statistics over i.i.d. samples at each size.

    For each size L an independent environment is drawn per sample on a
    torus of side TORUS_SIDE_FACTOR * L, the estimator of every requested
    order is evaluated with the mask of half-width L, and the per-size
    variances are fitted against L in log-log scale.  Samples whose solves
    fail to converge are flagged and excluded from the statistics, and the
    study continues.

    The stream index of a draw is size_position * samples_per_size +
    sample_index, so a study is a pure function of (law, configuration)
    regardless of worker count or completion order.
    """
    k_list = [ks] if isinstance(ks, int) else sorted(set(int(k) for k in ks))
    if any(k < 1 for k in k_list):
        raise ValueError("estimator orders must be >= 1")
    sizes = [int(s) for s in sizes]
    if any(a >= b for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly ascending")
    if samples_per_size < 2:
        raise ValueError("samples_per_size must be >= 2")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if xi is None:
        xi = np.eye(law.dim)[0]
    xi = np.asarray(xi, dtype=np.float64)
    k_max = max(k_list)

    jobs = [
        (size_idx, sample_idx, size_idx * samples_per_size + sample_idx)
        for size_idx in range(len(sizes))
        for sample_idx in range(samples_per_size)
    ]

    masks = {}
    for size in sizes:
        extents = (TORUS_SIDE_FACTOR * size,) * law.dim
        geometry = homogeneous_environment(extents, Topology.TORUS)
        masks[size] = build_mask(filt, float(size), geometry)

    def run(job):
        size_idx, sample_idx, stream = job
        size = sizes[size_idx]
        extents = (TORUS_SIDE_FACTOR * size,) * law.dim
        env = sample_environment(law, extents, Topology.TORUS, stream)
        mu = mu_rule(size)
        try:
            corrs = solve_corrector_set(env, mu, k_max, xi, config)
        except ConvergenceError:
            return [
                SampleRecord(size, sample_idx, stream, math.nan, math.nan, failed=True)
            ] * len(k_list)
        records = []
        for k in k_list:
            rep = estimate_from_correctors(env, corrs, k, masks[size], float(size), filt.name)
            records.append(
                SampleRecord(size, sample_idx, stream, rep.value, rep.max_residual)
            )
        return records

    if threads == 1:
        outcomes = [run(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, jobs))

    results = []
    for pos, k in enumerate(k_list):
        samples = tuple(outcome[pos] for outcome in outcomes)
        flagged = sum(1 for s in samples if s.failed)
        summaries = []
        for size in sizes:
            values = [s.estimate for s in samples if s.size == size and not s.failed]
            summaries.append(_summarize(size, values))
        usable = [(s.size, s.variance) for s in summaries if s.n >= 2 and s.variance > 0]
        if len(usable) >= 2:
            slope, stderr = fit_loglog_slope([u[0] for u in usable], [u[1] for u in usable])
        else:
            slope, stderr = math.nan, math.nan
        results.append(
            StudyResult(k, samples, tuple(summaries), slope, stderr, flagged, threads)
        )
    return results


def _echo_lines(config_echo: Mapping[str, object]) -> Iterable[str]:
    for key in config_echo:
        yield f"# {key} = {config_echo[key]}"


def write_samples_csv(study: StudyResult, out: IO[str], config_echo: Mapping[str, object]) -> None:
    """Per-sample rows: size,sample_index,stream_index,estimate,residual."""
    for line in _echo_lines(config_echo):
        out.write(line + "\n")
    out.write("size,sample_index,stream_index,estimate,residual\n")
    for s in study.samples:
        out.write(
            f"{s.size},{s.sample_index},{s.stream_index},{s.estimate:.17g},{s.residual:.17g}\n"
        )


def write_summary_csv(study: StudyResult, out: IO[str], config_echo: Mapping[str, object]) -> None:
    """Per-size rows: size,n,mean,variance,stderr; slope appended as a comment."""
    for line in _echo_lines(config_echo):
        out.write(line + "\n")
    out.write("size,n,mean,variance,stderr\n")
    for s in study.summaries:
        out.write(f"{s.size},{s.n},{s.mean:.17g},{s.variance:.17g},{s.stderr:.17g}\n")
    out.write(
        f"# variance_slope = {study.variance_slope:.17g}"
        f" (stderr {study.variance_slope_stderr:.17g}, flagged {study.flagged})\n"
    )
