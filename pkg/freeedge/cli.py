import json
import logging
import math
import os
import sys
import tempfile
from collections.abc import Iterator
from contextlib import contextmanager
from enum import StrEnum
from pathlib import Path

import numpy as np
import typer
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from freeedge import __version__
from freeedge.check_manager import CheckManager
from freeedge.common.errors import ErrorEnumEncoder, FreeEdgeError, ParseError, UsageError
from freeedge.common.logging import get_logger, setup_logger
from freeedge.common.rowfile import RowFile
from freeedge.common.ui.table import (
    checks_table,
    clt_table,
    edge_table,
    findings_table,
    render_parse_error,
)
from freeedge.numerics.freeconv import (
    SCAN_POINTS,
    SLOPE_TOLERANCE,
    RowSpec,
    Side,
    convolution_density,
    support_edge,
)
from freeedge.numerics.matrix_oracle import (
    EigenSolver,
    McConfig,
    density_cdf,
    edge_gap_report,
    kolmogorov_distance,
    sample_sum_spectrum,
    spectra_to_csv,
)
from freeedge.numerics.superconv import DEFAULT_C, K_SAMPLES, certify
from freeedge.numerics.transform import DEFAULT_EPSILONS

EXIT_PARSE = 2
EXIT_HYPOTHESIS = 4


class OutputFormat(StrEnum):
    record = "record"
    json = "json"


class SideChoice(StrEnum):
    right = "right"
    left = "left"
    both = "both"


# Global state for CLI options
class GlobalOptions:
    verbose: int = 0
    quiet: bool = False


global_options = GlobalOptions()
console = Console()
err_console = Console(stderr=True)


def configure_logging():
    """Configure logging based on global options."""
    if global_options.quiet:
        log_level = logging.ERROR
    elif global_options.verbose >= 2:
        log_level = logging.DEBUG
    elif global_options.verbose >= 1:
        log_level = logging.INFO
    else:
        log_level = logging.WARNING

    setup_logger(level=log_level)


def verbose_callback(value: int):
    global_options.verbose = value
    configure_logging()


def quiet_callback(value: bool):
    global_options.quiet = value
    configure_logging()


def split_list(values: list[str] | None) -> list[str]:
    """Flatten repeated and comma-separated option values."""
    if values is None:
        return []
    items: list[str] = []
    for value in values:
        items.extend(item.strip() for item in value.split(","))
    return [item for item in items if item]


def parse_floats(text: str, option: str) -> list[float]:
    try:
        return [float(item) for item in split_list([text])]
    except ValueError:
        raise UsageError(f"{option} takes comma-separated numbers, got {text!r}") from None


def read_text(source: Path) -> str:
    """Read a row file, '-' for stdin."""
    logger = get_logger("cli")
    if str(source) == "-":
        logger.debug("Reading row file from stdin")
        return sys.stdin.read()
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read {source}: {e}")
        typer.echo(f"Error: cannot read {source}: {e}", err=True)
        raise typer.Exit(code=EXIT_PARSE) from None
    logger.debug(f"Read {len(text)} characters from {source}")
    return text


def write_output(content: str, output: Path | None):
    """Write to stdout, or atomically replace `output` through a temporary file."""
    if output is None:
        typer.echo(content, nl=False)
        return
    directory = output.resolve().parent
    with tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=directory, prefix=f".{output.name}.", delete=False
    ) as handle:
        handle.write(content)
        temporary = handle.name
    os.replace(temporary, output)
    get_logger("cli").info(f"Wrote {len(content)} characters to {output}")


@contextmanager
def reported_errors(text: str | None = None, title: str | None = None) -> Iterator[None]:
    """Turn library errors into messages on stderr and their exit codes."""
    logger = get_logger("cli")
    try:
        yield
    except ParseError as e:
        logger.debug(f"Parse error: {e}")
        if text is not None and not global_options.quiet:
            render_parse_error(err_console, text, e, title=title)
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=e.exit_code) from None
    except FreeEdgeError as e:
        logger.debug(f"{type(e).__name__}: {e}")
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=e.exit_code) from None


def load_row(source: Path) -> RowSpec:
    text = read_text(source)
    with reported_errors(text, title=str(source)):
        return RowFile.parse(text).to_row()


app = typer.Typer(
    help="free-edge - Support edges, densities and superconvergence certificates "
    "of free additive convolutions",
    add_completion=False,
)


@app.callback()
def main(
    verbose: int = typer.Option(
        0,
        "--verbose",
        "-v",
        count=True,
        help="Increase verbosity (-v for INFO, -vv for DEBUG)",
        callback=verbose_callback,
        is_eager=True,
    ),
    quiet: bool = typer.Option(
        False,
        "--quiet",
        "-q",
        help="Suppress all output except errors",
        callback=quiet_callback,
        is_eager=True,
    ),
):
    """Global options for free-edge."""
    pass


@app.command()
def edge(
    file: Path = typer.Argument(..., metavar="FILE", help="Row file, or '-' for stdin"),
    side: SideChoice = typer.Option(SideChoice.both, "--side", "-s", help="Edge(s) to compute"),
    tol: float = typer.Option(
        SLOPE_TOLERANCE, "--tol", help="Stop when |K_n'| <= tol * v_n at the critical point"
    ),
    scan_points: int = typer.Option(SCAN_POINTS, "--scan-points", help="Initial scan grid size"),
    format: OutputFormat = typer.Option(OutputFormat.record, "--format", "-f"),
):
    """
    Compute the support edge(s) of the row sum.
    """
    logger = get_logger("cli")
    row = load_row(file)
    sides = [Side.LEFT, Side.RIGHT] if side == SideChoice.both else [Side(side.value)]
    logger.info(f"Computing {', '.join(s.value for s in sides)} edge of {row.name}")

    with reported_errors():
        reports = [
            support_edge(row, s, scan_points=scan_points, slope_tolerance=tol) for s in sides
        ]

    if format == OutputFormat.json:
        typer.echo(json.dumps([r.to_dict() for r in reports], indent=2, cls=ErrorEnumEncoder))
        return

    lines = []
    for report in reports:
        prefix = report.side.value
        lines.append(f"{prefix}_edge: {report.edge!r}")
        lines.append(f"{prefix}_error_bound: {report.error_bound!r}")
        lines.append(f"{prefix}_mode: {report.mode.value}")
        lines.append(f"{prefix}_certified: {'true' if report.certified else 'false'}")
        if report.atom is not None:
            lines.append(f"{prefix}_atom: {report.atom!r}")
            lines.append(f"{prefix}_atom_mass: {report.atom_mass!r}")
    typer.echo("\n".join(lines))
    if global_options.verbose >= 1:
        err_console.print(edge_table(reports))


@app.command("certify")
def certify_cmd(
    file: Path = typer.Argument(..., metavar="FILE", help="Row file, or '-' for stdin"),
    c: float = typer.Option(DEFAULT_C, "--c", help="Constant of the certified intervals"),
    checks: list[str] | None = typer.Option(
        None,
        "--checks",
        help="Only run the named check(s); comma-separated or repeated. Default: all",
    ),
    k_samples: int = typer.Option(K_SAMPLES, "--k-samples", help="Kernel estimate sample points"),
    strict: bool = typer.Option(
        False, "--strict", help="Exit with code 4 when a hypothesis or check fails"
    ),
    format: OutputFormat = typer.Option(OutputFormat.record, "--format", "-f"),
):
    """
    Build the superconvergence certificate of the row and run the certificate checks.
    """
    logger = get_logger("cli")
    row = load_row(file)
    names = split_list(checks) or None

    with reported_errors():
        certificate = certify(row, c=c, checks=names, k_samples=k_samples)

    if format == OutputFormat.json:
        typer.echo(certificate.to_json())
    else:
        typer.echo(certificate.to_record(), nl=False)
        if global_options.verbose >= 1 and certificate.findings:
            err_console.print(findings_table(certificate.findings))

    failed = certificate.failed_findings
    logger.info(f"{len(certificate.findings)} findings, {len(failed)} failed")
    if strict and failed:
        logger.error(f"{len(failed)} finding(s) failed: {[f.rule_id.value for f in failed]}")
        raise typer.Exit(code=EXIT_HYPOTHESIS)


@app.command()
def density(
    file: Path = typer.Argument(..., metavar="FILE", help="Row file, or '-' for stdin"),
    xmin: float | None = typer.Option(None, "--xmin", help="Left end of the grid"),
    xmax: float | None = typer.Option(None, "--xmax", help="Right end of the grid"),
    points: int = typer.Option(201, "--points", help="Number of grid points"),
    eps_list: str = typer.Option(
        ",".join(repr(e) for e in DEFAULT_EPSILONS),
        "--eps-list",
        help="Decreasing offsets above the real axis, comma-separated",
    ),
    workers: int | None = typer.Option(
        None, "--workers", help="Solve grid points independently on this many threads"
    ),
    output: Path | None = typer.Option(None, "--output", "-o", help="CSV file instead of stdout"),
):
    """
    Density of the row sum on a grid, as CSV x,phi,quality.
    """
    logger = get_logger("cli")
    row = load_row(file)

    with reported_errors():
        epsilons = parse_floats(eps_list, "--eps-list")
        if points < 2:
            raise UsageError(f"--points must be at least 2, got {points}")
        reach = 2.0 * math.sqrt(row.variance) + 2.0 * row.norm_bound
        lo = -reach if xmin is None else xmin
        hi = reach if xmax is None else xmax
        if not lo < hi:
            raise UsageError(f"empty grid [{lo!r}, {hi!r}]")
        xs = np.linspace(lo, hi, points)
        logger.info(f"Density of {row.name} on [{lo!r}, {hi!r}] with {points} points")
        grid = convolution_density(row, xs, epsilons, continuation=workers is None, workers=workers)

    flagged = grid.flagged()
    if flagged:
        logger.warning(f"{len(flagged)} of {points} points are flagged")
    write_output(grid.to_csv(), output)


@app.command()
def mc(
    file: Path = typer.Argument(..., metavar="FILE", help="Row file, or '-' for stdin"),
    n: int = typer.Option(256, "--N", help="Matrix dimension"),
    trials: int = typer.Option(32, "--trials", help="Number of independent trials"),
    seed: int = typer.Option(0, "--seed", help="Seed of the per-trial generators"),
    eigensolver: EigenSolver = typer.Option(EigenSolver.LAPACK, "--eigensolver"),
    c: float = typer.Option(DEFAULT_C, "--c", help="Constant of the certified interval"),
    kolmogorov: bool = typer.Option(
        False, "--kolmogorov", help="Also report the Kolmogorov distance to the predicted CDF"
    ),
    workers: int | None = typer.Option(None, "--workers", help="Threads for the trials"),
    output: Path | None = typer.Option(
        None, "--output", "-o", help="Spectra CSV file; without it the CSV goes to stdout"
    ),
):
    """
    Monte Carlo spectra of Haar-rotated sums compared with the certificate.
    """
    logger = get_logger("cli")
    row = load_row(file)

    with reported_errors():
        cfg = McConfig(
            N=n, trials=trials, seed=seed, row=row, eigensolver=eigensolver, workers=workers
        )
        if global_options.quiet:
            spectra = sample_sum_spectrum(cfg)
        else:
            with Progress(
                SpinnerColumn(),
                TextColumn("[progress.description]{task.description}"),
                TimeElapsedColumn(),
                console=err_console,
                transient=True,
            ) as progress:
                progress.add_task(f"Sampling {trials} trials at N = {n}", total=None)
                spectra = sample_sum_spectrum(cfg)

        certificate = certify(row, c=c)
        report = edge_gap_report(spectra, certificate).to_record()
        if kolmogorov:
            pooled = spectra.pooled()
            pad = 0.05 * (pooled[-1] - pooled[0]) + 1e-3
            xs = np.linspace(pooled[0] - pad, pooled[-1] + pad, 801)
            cdf = density_cdf(convolution_density(row, xs))
            report += f"kolmogorov: {kolmogorov_distance(pooled, cdf)!r}\n"

    logger.info(f"{len(spectra.trials)} trials kept, {len(spectra.dropped)} dropped")
    write_output(spectra_to_csv(spectra), output)
    if output is None:
        typer.echo(report, nl=False, err=True)
    else:
        typer.echo(report, nl=False)


@app.command()
def clt(
    measure_file: Path = typer.Option(..., "--measure-file", "-m", help="File defining measures"),
    measure: str | None = typer.Option(
        None, "--measure", help="Measure to sum; default: the first one in the file"
    ),
    n_list: str = typer.Option("4,16,64,256", "--n-list", help="Row lengths, comma-separated"),
    c: float = typer.Option(DEFAULT_C, "--c", help="Constant of the envelope c L^3 / sigma^2"),
    csv: bool = typer.Option(False, "--csv", help="Print CSV instead of a table"),
):
    """
    Right edge of (xi_1 + ... + xi_n) / sqrt(n) against the semicircle edge 2 sqrt(a2).
    """
    logger = get_logger("cli")
    text = read_text(measure_file)
    with reported_errors(text, title=str(measure_file)):
        document = RowFile.parse(text, require_row=False)
        if not document.measures:
            raise ParseError("no measure statement", max(len(text.splitlines()), 1), 1)

    with reported_errors():
        xi = document.measure(measure or document.measures[0].name)
        try:
            lengths = [int(item) for item in split_list([n_list])]
        except ValueError:
            raise UsageError(f"--n-list takes comma-separated integers, got {n_list!r}") from None

        a2 = xi.variance
        reference = 2.0 * math.sqrt(a2)
        rows = []
        for length in lengths:
            report = support_edge(RowSpec.normalized_sum(xi, length))
            edge_value = report.extent
            envelope = c * xi.norm_bound**3 / a2 / math.sqrt(length) if a2 > 0 else 0.0
            rows.append((length, edge_value, abs(edge_value - reference), envelope))
            logger.debug(f"n = {length}: edge {edge_value!r} ({report.mode.value})")

    if csv:
        lines = ["n,edge,gap,envelope"]
        lines.extend(f"{k},{e:.17g},{g:.17g},{v:.17g}" for k, e, g, v in rows)
        typer.echo("\n".join(lines))
    else:
        console.print(clt_table(rows, reference))


@app.command("checks")
def list_checks():
    """
    List the available certificate checks.
    """
    logger = get_logger("cli")
    found = CheckManager.load_checks()
    logger.debug(f"Loaded {len(found)} checks")

    if global_options.verbose >= 1:
        console.print(checks_table(found))
        return

    width = max(len(check.__symbolic_name__ or "") for check in found)
    for check in found:
        typer.echo(f"- {check.__symbolic_name__:<{width}} : {check.description}")


@app.command()
def version():
    """Print the free-edge version."""
    typer.echo(__version__)


if __name__ == "__main__":
    app()
