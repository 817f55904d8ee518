"""Command-line front end.

Subcommands expose the coefficient tables, single estimates, the dense
spectral oracle, and the convergence and variance studies; outputs are
plain key=value blocks and plot-ready CSV.  Exit codes: 0 on success,
1 on numerical failure (non-convergence, oversize oracle, bad mask),
2 on usage errors.

A plain-text config file of key=value lines (keys are option names,
dashes or underscores) can seed any command through --config; explicit
flags override file values.
"""
from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import SpecHomError
from .lattice import (
    Environment,
    Topology,
    builtin_checkerboard4,
    cell_average_axi,
    domain_extents,
    read_environment,
    unit_direction,
)
from .montecarlo import (
    EnvironmentLaw,
    parse_distribution,
    parse_scaling_rule,
    sample_environment,
    variance_study,
    write_samples_csv,
    write_summary_csv,
)
from .convergence import NUMERICAL_FLOOR, convergence_study, write_convergence_csv
from .scheme import MAX_ORDER, EstimateReport, coefficients, estimate, filter_from_name
from .solver import (
    Preconditioner,
    SolveConfig,
    exact_homogenized,
    solve_modified_corrector,
)
from .spectral import (
    MAX_DENSE_SITES,
    ahom_spectral,
    corrector_l2_spectral,
    spectral_measure,
)

BUILTIN_PREFIX = "builtin:"
BUILTINS = {"checkerboard4": builtin_checkerboard4}


def _load_config(ctx: click.Context, param: click.Parameter, value):
    """Eager --config callback: file values become per-command defaults."""
    if not value:
        return value
    defaults = {}
    for line_no, line in enumerate(Path(value).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.UsageError(f"{value}:{line_no}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        defaults[key.strip().replace("-", "_")] = val.strip()
    ctx.default_map = {**defaults, **(ctx.default_map or {})}
    return value


def config_option(fn):
    return click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        callback=_load_config,
        expose_value=False,
        is_eager=True,
        help="Plain-text key=value defaults; flags override file values.",
    )(fn)


def solver_options(fn):
    fn = click.option("--tol", type=float, default=1e-12, show_default=True,
                      help="Relative residual tolerance of the corrector solves.")(fn)
    fn = click.option("--max-iter", type=int, default=None,
                      help="Iteration cap (default 50*sqrt(#sites)+1000).")(fn)
    fn = click.option("--precond", type=click.Choice(["diagonal", "none"]),
                      default="diagonal", show_default=True)(fn)
    return fn


def _solve_config(tol: float, max_iter: int | None, precond: str) -> SolveConfig:
    try:
        return SolveConfig(tol, max_iter, Preconditioner(precond))
    except ValueError as err:
        raise click.UsageError(str(err)) from err


def _parse_xi(text: str, dim: int) -> np.ndarray:
    text = text.strip().lower()
    if text.startswith("e") and text[1:].isdigit():
        axis = int(text[1:])
        if not (1 <= axis <= dim):
            raise click.UsageError(f"axis direction {text!r} out of range for dimension {dim}")
        xi = np.zeros(dim)
        xi[axis - 1] = 1.0
        return xi
    try:
        parts = [float(v) for v in text.replace(";", ",").split(",")]
        return unit_direction(parts, dim)
    except ValueError as err:
        raise click.UsageError(f"cannot parse direction {text!r}: {err}") from err


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as err:
        raise click.UsageError(f"cannot parse {what} list {text!r}") from err


def _resolve_environment(
    env: str | None,
    law: str | None,
    dim: int,
    seed: int,
    extents: str | None,
    stream: int,
) -> Environment:
    """Exactly one of --env / --law names the environment source."""
    if (env is None) == (law is None):
        raise click.UsageError("exactly one of --env and --law must be given")
    if env is not None:
        if env.startswith(BUILTIN_PREFIX):
            name = env[len(BUILTIN_PREFIX):]
            if name not in BUILTINS:
                raise click.UsageError(
                    f"unknown builtin {name!r}; available: {', '.join(sorted(BUILTINS))}"
                )
            return BUILTINS[name]()
        try:
            return read_environment(env)
        except (OSError, ValueError) as err:
            raise click.UsageError(f"cannot read environment {env!r}: {err}") from err
    if extents is None:
        raise click.UsageError("--law requires --extents")
    shape = tuple(_parse_int_list(extents, "extents"))
    try:
        distribution = parse_distribution(law)
        env_law = EnvironmentLaw(distribution, len(shape) if dim is None else dim, seed)
        if len(shape) != env_law.dim:
            raise ValueError(f"extents {shape} do not match dimension {env_law.dim}")
        return sample_environment(env_law, shape, Topology.TORUS, stream)
    except ValueError as err:
        raise click.UsageError(str(err)) from err


def env_options(fn):
    fn = click.option("--env", default=None,
                      help=f"Environment file path or '{BUILTIN_PREFIX}checkerboard4'.")(fn)
    fn = click.option("--law", default=None,
                      help="Edge law 'twopoint:a:b:p' or 'uniform:lo:hi' (torus sample).")(fn)
    fn = click.option("--dim", type=int, default=2, show_default=True,
                      help="Dimension for --law environments.")(fn)
    fn = click.option("--seed", type=click.IntRange(0), default=0, show_default=True)(fn)
    fn = click.option("--extents", default=None, help="Comma-separated extents for --law.")(fn)
    fn = click.option("--stream", type=click.IntRange(0), default=0, show_default=True,
                      help="Stream index of the --law draw.")(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Approximate homogenized coefficients of lattice conductance models."""


@main.command()
@config_option
@click.option("--k", type=click.IntRange(1, MAX_ORDER), required=True,
              help=f"Estimator order, 1..{MAX_ORDER}.")
@click.option("--format", "fmt", type=click.Choice(["rational", "decimal"]),
              default="rational", show_default=True)
def coeffs(k: int, fmt: str):
    """Print the exact coefficient tables of the order-k estimator."""
    table = coefficients(k)

    def show(value):
        return str(value) if fmt == "rational" else f"{float(value):.17g}"

    for m, cm in enumerate(table.c, start=1):
        click.echo(f"c[{m}] = {show(cm)}")
    for i, ai in enumerate(table.a):
        click.echo(f"a[{i}] = {show(ai)}")
    for i, etai in enumerate(table.eta):
        click.echo(f"eta[{i}] = {show(etai)}")
    for i, j in table.nu_pairs():
        click.echo(f"nu[{i}][{j}] = {show(table.nu[(i, j)])}")


@main.command()
@config_option
@env_options
@click.option("--xi", default="e1", show_default=True, help="Direction: 'e<i>' or components.")
@solver_options
def exact(env, law, dim, seed, extents, stream, xi, tol, max_iter, precond):
    """Exact homogenized coefficient of a periodic cell."""
    environment = _resolve_environment(env, law, dim, seed, extents, stream)
    if environment.topology is not Topology.TORUS:
        raise click.UsageError("exact requires a periodic (torus) environment")
    direction = _parse_xi(xi, environment.dim)
    config = _solve_config(tol, max_iter, precond)
    try:
        value = exact_homogenized(environment, direction, config)
    except SpecHomError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    click.echo(f"ahom = {value:.17g}")


@main.command(name="estimate")
@config_option
@env_options
@click.option("--mu", type=float, required=True, help="Zero-order term, > 0.")
@click.option("--k", type=click.IntRange(1, MAX_ORDER), default=1, show_default=True)
@click.option("--length", "--L", "length", type=float, default=None,
              help="Averaging half-width L; omit for a uniform full-cell average.")
@click.option("--filter", "filter_name", default="smoothbump", show_default=True,
              help="Averaging filter: 'smoothbump' or 'poly:<p>'.")
@click.option("--xi", default="e1", show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Append the report as a CSV row (header written if new).")
@solver_options
def estimate_cmd(env, law, dim, seed, extents, stream, mu, k, length, filter_name,
                 xi, csv_path, tol, max_iter, precond):
    """Evaluate the order-k estimator on one environment."""
    environment = _resolve_environment(env, law, dim, seed, extents, stream)
    direction = _parse_xi(xi, environment.dim)
    config = _solve_config(tol, max_iter, precond)
    if mu <= 0:
        raise click.UsageError(f"--mu must be positive, got {mu}")
    side = max(domain_extents(environment))
    if length is not None and length > side:
        raise click.UsageError(f"--length {length} exceeds the geometry side {side}")
    try:
        filt = filter_from_name(filter_name)
    except ValueError as err:
        raise click.UsageError(str(err)) from err
    try:
        report = estimate(environment, mu, k, direction, length, filt, config)
    except SpecHomError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    click.echo(report.key_value_block())
    if csv_path:
        path = Path(csv_path)
        new = not path.exists()
        with path.open("a") as out:
            if new:
                out.write(EstimateReport.CSV_HEADER + "\n")
            out.write(report.csv_row() + "\n")


@main.command()
@config_option
@env_options
@click.option("--xi", default="e1", show_default=True)
@click.option("--mu-check", type=float, default=0.1, show_default=True,
              help="Zero-order term of the corrector-identity check.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write (lambda, weight) pairs as CSV (default: stdout).")
@solver_options
def spectrum(env, law, dim, seed, extents, stream, xi, mu_check, out,
             tol, max_iter, precond):
    """Dense spectral oracle of a small periodic cell."""
    environment = _resolve_environment(env, law, dim, seed, extents, stream)
    if environment.topology is not Topology.TORUS:
        raise click.UsageError("spectrum requires a periodic (torus) environment")
    if environment.nsites > MAX_DENSE_SITES:
        raise click.UsageError(
            f"cell has {environment.nsites} sites, dense cap is {MAX_DENSE_SITES}"
        )
    direction = _parse_xi(xi, environment.dim)
    config = _solve_config(tol, max_iter, precond)
    if mu_check <= 0:
        raise click.UsageError("--mu-check must be positive")
    try:
        measure = spectral_measure(environment, direction)
        axi = cell_average_axi(environment, direction)
        ahom_s = ahom_spectral(measure, axi)
        ahom_c = exact_homogenized(environment, direction, config)
        phi = solve_modified_corrector(environment, mu_check, direction, config)
        phi_l2 = float(np.mean(phi**2))
        phi_l2_spectral = corrector_l2_spectral(measure, mu_check)
    except SpecHomError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    lines = ["lambda,weight"]
    lines += [
        f"{lam:.17g},{w:.17g}" for lam, w in zip(measure.eigenvalues, measure.weights)
    ]
    csv_text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(csv_text)
    else:
        click.echo(csv_text, nl=False)
    denom = abs(ahom_c) if ahom_c != 0 else 1.0
    phi_denom = abs(phi_l2_spectral) if phi_l2_spectral != 0 else 1.0
    click.echo(f"gap = {measure.gap:.17g}")
    click.echo(f"sum_weights = {float(measure.weights.sum()):.17g}")
    click.echo(f"drift_square_mean = {measure.drift_square_mean:.17g}")
    click.echo(f"zero_mode_weight = {measure.zero_mode_weight:.17g}")
    click.echo(f"ahom_spectral = {ahom_s:.17g}")
    click.echo(f"ahom_corrector = {ahom_c:.17g}")
    click.echo(f"ahom_rel_gap = {abs(ahom_s - ahom_c) / denom:.17g}")
    click.echo(f"phi_l2_spectral = {phi_l2_spectral:.17g}")
    click.echo(f"phi_l2_corrector = {phi_l2:.17g}")
    click.echo(f"phi_l2_rel_gap = {abs(phi_l2 - phi_l2_spectral) / phi_denom:.17g}")


@main.command()
@config_option
@click.option("--env", default=f"{BUILTIN_PREFIX}checkerboard4", show_default=True,
              help="Periodic reference cell (file path or builtin).")
@click.option("--k", "k_text", default="1,2", show_default=True,
              help="Comma-separated estimator orders.")
@click.option("--r-list", "--R", "r_text", default="24,36,54,81,122,183",
              show_default=True, help="Ascending cell counts per box side.")
@click.option("--mu-rule", default="250*R^-1.5", show_default=True)
@click.option("--l-rule", default="R/3", show_default=True)
@click.option("--filter", "filter_name", default="smoothbump", show_default=True)
@click.option("--xi", default="e1", show_default=True)
@click.option("--floor", type=float, default=NUMERICAL_FLOOR, show_default=True,
              help="Errors below this are excluded from the rate fit.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="CSV output path (default: stdout).")
@solver_options
def convergence(env, k_text, r_text, mu_rule, l_rule, filter_name, xi, floor, out,
                tol, max_iter, precond):
    """Error decay of the box estimator on a periodic medium.

    R counts periodic cells per side; the box spans R times the cell
    extent in lattice sites, mu and L follow the given rules of R.
    """
    cell = _resolve_environment(env, None, 2, 0, None, 0)
    if cell.topology is not Topology.TORUS:
        raise click.UsageError("convergence requires a periodic reference cell")
    ks = _parse_int_list(k_text, "order")
    r_list = _parse_int_list(r_text, "cell-count")
    config = _solve_config(tol, max_iter, precond)
    try:
        filt = filter_from_name(filter_name)
        mu = parse_scaling_rule(mu_rule, "R")
        length = parse_scaling_rule(l_rule, "R")
    except ValueError as err:
        raise click.UsageError(str(err)) from err
    direction = _parse_xi(xi, cell.dim)
    try:
        result = convergence_study(cell, ks, r_list, mu, length, filt, direction,
                                   config, floor)
    except (SpecHomError, ValueError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    echo = {
        "command": "convergence",
        "env": env,
        "k": ",".join(str(k) for k in sorted(set(ks))),
        "r_list": ",".join(str(r) for r in r_list),
        "mu_rule": mu.spec(),
        "l_rule": length.spec(),
        "filter": filt.name,
        "xi": ";".join(f"{v:.17g}" for v in direction),
        "tol": f"{config.rel_tolerance:.17g}",
    }
    if out:
        with Path(out).open("w") as handle:
            write_convergence_csv(result, handle, echo)
    else:
        write_convergence_csv(result, sys.stdout, echo)
    for k in sorted(result.fits):
        fit = result.fits[k]
        click.echo(
            f"slope k={k}: {fit.slope:.6g} (stderr {fit.stderr:.3g}, "
            f"npoints {fit.npoints})",
            err=out is None,
        )


@main.command()
@config_option
@click.option("--law", required=True, help="Edge law 'twopoint:a:b:p' or 'uniform:lo:hi'.")
@click.option("--dim", type=int, default=2, show_default=True)
@click.option("--seed", type=click.IntRange(0), default=0, show_default=True)
@click.option("--k", "k_text", default="1", show_default=True,
              help="Comma-separated estimator orders (corrector solves are shared).")
@click.option("--sizes", default="16,32,64", show_default=True,
              help="Ascending averaging half-widths L.")
@click.option("--samples", type=click.IntRange(2), default=100, show_default=True)
@click.option("--mu-rule", default="L^-2", show_default=True)
@click.option("--filter", "filter_name", default="smoothbump", show_default=True)
@click.option("--xi", default="e1", show_default=True)
@click.option("--threads", type=click.IntRange(1), default=1, show_default=True,
              help="Worker threads; 1 guarantees byte-identical reruns.")
@click.option("--out-samples", type=click.Path(dir_okay=False), required=True,
              help="Per-sample CSV path ('{k}' substituted by the order).")
@click.option("--out-summary", type=click.Path(dir_okay=False), required=True,
              help="Per-size summary CSV path ('{k}' substituted by the order).")
@solver_options
def variance(law, dim, seed, k_text, sizes, samples, mu_rule, filter_name, xi,
             threads, out_samples, out_summary, tol, max_iter, precond):
    """Monte Carlo variance study of the masked estimator on random media."""
    ks = _parse_int_list(k_text, "order")
    size_list = _parse_int_list(sizes, "size")
    config = _solve_config(tol, max_iter, precond)
    try:
        distribution = parse_distribution(law)
        env_law = EnvironmentLaw(distribution, dim, seed)
        rule = parse_scaling_rule(mu_rule, "L")
        filt = filter_from_name(filter_name)
    except ValueError as err:
        raise click.UsageError(str(err)) from err
    direction = _parse_xi(xi, dim)
    if len(ks) > 1 and ("{k}" not in out_samples or "{k}" not in out_summary):
        raise click.UsageError("multiple orders need '{k}' in the output paths")
    try:
        studies = variance_study(env_law, rule, ks, size_list, samples, filt,
                                 direction, config, threads)
    except (SpecHomError, ValueError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    for study in studies:
        echo = {
            "command": "variance",
            "law": distribution.spec(),
            "dim": str(dim),
            "seed": str(seed),
            "k": str(study.k),
            "sizes": ",".join(str(s) for s in size_list),
            "samples": str(samples),
            "mu_rule": rule.spec(),
            "filter": filt.name,
            "xi": ";".join(f"{v:.17g}" for v in direction),
            "threads": str(threads),
            "tol": f"{config.rel_tolerance:.17g}",
        }
        sample_path = Path(out_samples.replace("{k}", str(study.k)))
        summary_path = Path(out_summary.replace("{k}", str(study.k)))
        with sample_path.open("w") as handle:
            write_samples_csv(study, handle, echo)
        with summary_path.open("w") as handle:
            write_summary_csv(study, handle, echo)
        click.echo(
            f"k={study.k}: variance slope {study.variance_slope:.6g} "
            f"(stderr {study.variance_slope_stderr:.3g}, flagged {study.flagged})"
        )


if __name__ == "__main__":
    main()
