from collections.abc import Iterable, Sequence

from rich.console import Console, Group
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from freeedge.common.errors import ParseError
from freeedge.common.feedback import Finding, Severity

POINTER_CHAR = "^"


def severity_style(severity: Severity | None = None) -> str:
    if severity == Severity.ERROR:
        return "bold red"
    elif severity == Severity.WARNING:
        return "bold yellow"
    elif severity == Severity.INFO:
        return "cyan"
    return "bold red"


def column_pointer(line: str, column: int) -> str:
    """Spaces up to the 1-based column, then a caret; tabs keep their width."""
    visual = line.expandtabs(4)
    index = min(max(column, 1) - 1, len(visual))
    padding = "".join("    " if ch == "\t" else " " for ch in line[:index])
    return padding + POINTER_CHAR


def render_parse_error(console: Console, text: str, error: ParseError, title: str | None = None):
    """Show the offending row-file line with a caret under the error column."""
    lines = text.splitlines()
    table = Table.grid(padding=(0, 1))
    table.add_column("g", width=1, justify="right", no_wrap=True)
    table.add_column("#", justify="right", no_wrap=True, style="dim")
    table.add_column("code")

    width = len(str(error.line))
    if 1 <= error.line <= len(lines):
        raw = lines[error.line - 1]
        table.add_row("❱", str(error.line), Text(raw, no_wrap=True, style="bold"))
        table.add_row("│", " " * width, Text(column_pointer(raw, error.column), style="cyan"))
    table.add_row("│", " " * width, Text(error.message, style=severity_style(Severity.ERROR)))
    console.print(Panel(Group(table), title=title, border_style="dim"))


def edge_table(reports: Iterable) -> Table:
    table = Table(title="Support edges")
    table.add_column("side")
    table.add_column("edge", justify="right")
    table.add_column("error bound", justify="right")
    table.add_column("mode")
    table.add_column("atom", justify="right")
    for report in reports:
        table.add_row(
            report.side.value,
            f"{report.edge:.12g}",
            f"{report.error_bound:.3e}",
            report.mode.value,
            "" if report.atom is None else f"{report.atom:.12g} ({report.atom_mass:.3g})",
        )
    return table


def clt_table(rows: Sequence[tuple[int, float, float, float]], reference: float) -> Table:
    """Rows of (n, edge, gap, envelope)."""
    table = Table(title=f"Right edge of the normalized sum, reference {reference:.12g}")
    table.add_column("n", justify="right")
    table.add_column("edge", justify="right")
    table.add_column("|edge - 2 sqrt(a2)|", justify="right")
    table.add_column("c L^3 / (sigma^2 sqrt(n))", justify="right")
    for n, edge, gap, envelope in rows:
        table.add_row(str(n), f"{edge:.12g}", f"{gap:.6e}", f"{envelope:.6e}")
    return table


def findings_table(findings: Iterable[Finding]) -> Table:
    table = Table(title="Findings")
    table.add_column("code")
    table.add_column("check")
    table.add_column("verdict")
    table.add_column("message")
    for finding in findings:
        verdict = Text(
            "pass" if finding.passed else finding.severity.value,
            style="green" if finding.passed else severity_style(finding.severity),
        )
        table.add_row(finding.rule_id.value, finding.check, verdict, finding.message)
    return table


def checks_table(checks: Iterable) -> Table:
    table = Table(title="Certificate checks")
    table.add_column("name")
    table.add_column("description")
    for check in checks:
        table.add_row(check.__symbolic_name__, check.description)
    return table
