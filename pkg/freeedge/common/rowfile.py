"""
Row files: named measures and the row built from them.

    # comments and blank lines are ignored
    measure coin: atoms=[-1.0, 1.0] weights=[0.5, 0.5]
    row clt: members=[coin×64] scale=1/sqrt(k)

``x`` and ``*`` are accepted in place of ``×``. Numbers are decimals,
fractions ``p/q`` and ``sqrt(x)`` factors, e.g. ``-sqrt(3)`` or ``1/sqrt(3)``.
The scale token ``1/sqrt(k)`` divides by the square root of the member
count. ``center=yes`` centers every member before the row is built.
"""

import math
import re
from dataclasses import dataclass

from parse import parse

from freeedge.common.errors import MeasureError, ParseError
from freeedge.numerics.freeconv import RowSpec
from freeedge.numerics.measure import AtomicMeasure, center

MEASURE_BODY = "atoms=[{atoms}] weights=[{weights}]"
MEMBERS_BODY = "members=[{members}]{options}"
OPTION = "{key}={value}"
SQRT_FACTOR = "sqrt({radicand})"
SQRT_K = "1/sqrt(k)"
MULTIPLIERS = ("×", "*", "x")

NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")


@dataclass(frozen=True)
class MeasureDecl:
    name: str
    atoms: tuple[float, ...]
    weights: tuple[float, ...]
    line: int = 0

    def to_measure(self) -> AtomicMeasure:
        return AtomicMeasure(self.atoms, self.weights, name=self.name)

    def __str__(self) -> str:
        atoms = ", ".join(repr(t) for t in self.atoms)
        weights = ", ".join(repr(w) for w in self.weights)
        return f"measure {self.name}: atoms=[{atoms}] weights=[{weights}]"


@dataclass(frozen=True)
class RowDecl:
    members: tuple[tuple[str, int], ...]
    name: str | None = None
    scale: float = 1.0
    sqrt_k: bool = False
    center: bool = False
    line: int = 0

    @property
    def k_n(self) -> int:
        return sum(count for _, count in self.members)

    def __str__(self) -> str:
        head = "row" if self.name is None else f"row {self.name}"
        members = ", ".join(f"{name}×{count}" for name, count in self.members)
        text = f"{head}: members=[{members}]"
        if self.sqrt_k:
            text += f" scale={SQRT_K}"
        elif self.scale != 1.0:
            text += f" scale={self.scale!r}"
        if self.center:
            text += " center=yes"
        return text


@dataclass(frozen=True)
class RowFile:
    measures: tuple[MeasureDecl, ...]
    row: RowDecl | None = None

    @classmethod
    def parse(cls, text: str, require_row: bool = True) -> "RowFile":
        return parse_row_file(text, require_row)

    def __str__(self) -> str:
        lines = [str(m) for m in self.measures]
        if self.row is not None:
            lines.append(str(self.row))
        return "\n".join(lines) + "\n"

    def measure(self, name: str) -> AtomicMeasure:
        for decl in self.measures:
            if decl.name == name:
                return decl.to_measure()
        raise MeasureError(f"no measure named {name!r}")

    def to_row(self) -> RowSpec:
        """
        Build the row.

        A single member group with ``scale=1/sqrt(k)`` becomes a normalized
        sum, whose K-function is evaluated from the base measure alone.
        """
        row = self.row
        if row is None:
            raise MeasureError("the file defines no row")
        label = row.name or "row"
        try:
            groups = []
            for name, count in row.members:
                mu = self.measure(name)
                groups.append((center(mu) if row.center else mu, count))

            if row.sqrt_k and len(groups) == 1:
                mu, count = groups[0]
                return RowSpec.normalized_sum(mu, count, name=label)
            spec = RowSpec.from_groups(groups, name=label)
            scale = 1.0 / math.sqrt(row.k_n) if row.sqrt_k else row.scale
            return spec if scale == 1.0 else spec.scaled(scale)
        except MeasureError as exc:
            raise ParseError(str(exc), row.line, 1) from exc


def parse_row_file(text: str, require_row: bool = True) -> RowFile:
    """
    Parse a row file.

    Raises:
        ParseError: with the line and column of the first problem
    """
    measures: list[MeasureDecl] = []
    row: RowDecl | None = None
    lines = text.splitlines()

    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        head, colon, _ = line.partition(":")
        if not colon:
            raise ParseError("expected '<statement>: ...'", number, len(line) + 1)

        keyword, _, name = head.strip().partition(" ")
        name = name.strip()
        if keyword == "measure":
            decl = _parse_measure(line, number, name)
            if any(m.name == decl.name for m in measures):
                raise ParseError(f"measure {decl.name!r} is defined twice", number, 1)
            measures.append(decl)
        elif keyword == "row":
            if row is not None:
                raise ParseError(f"second row statement, first on line {row.line}", number, 1)
            row = _parse_row(line, number, name or None, measures)
        else:
            column = len(raw) - len(raw.lstrip()) + 1
            raise ParseError(f"unknown statement {keyword!r}", number, column)

    if require_row and row is None:
        raise ParseError("no row statement", max(len(lines), 1), 1)
    return RowFile(measures=tuple(measures), row=row)


def _parse_measure(line: str, number: int, name: str) -> MeasureDecl:
    _check_name(line, number, name)
    start = line.index(":") + 1
    body = line[start:].strip()
    fields = parse(MEASURE_BODY, body)
    if fields is None:
        raise ParseError("expected 'atoms=[...] weights=[...]'", number, _column(line, body, start))

    atoms_at = line.index("atoms=[", start) + len("atoms=[")
    weights_at = line.index("weights=[", atoms_at) + len("weights=[")
    atoms = _numbers(fields["atoms"], atoms_at, number)
    weights = _numbers(fields["weights"], weights_at, number)

    try:
        AtomicMeasure(atoms, weights, name=name)
    except MeasureError as exc:
        raise ParseError(str(exc), number, atoms_at + 1) from exc
    return MeasureDecl(name=name, atoms=atoms, weights=weights, line=number)


def _parse_row(
    line: str, number: int, name: str | None, measures: list[MeasureDecl]
) -> RowDecl:
    if name is not None:
        _check_name(line, number, name)
    start = line.index(":") + 1
    body = line[start:].strip() + " "
    fields = parse(MEMBERS_BODY, body)
    if fields is None:
        raise ParseError(
            "expected 'members=[<measure>×<count>, ...]'",
            number,
            _column(line, body.strip(), start),
        )

    members_at = line.index("members=[", start) + len("members=[")
    known = {m.name for m in measures}
    members: list[tuple[str, int]] = []
    for token, column in _items(fields["members"], members_at, number):
        member, count = _parse_member(token, number, column)
        if member not in known:
            raise ParseError(f"undefined measure {member!r}", number, column)
        members.append((member, count))
    if not members:
        raise ParseError("a row needs at least one member", number, members_at + 1)

    options: dict[str, object] = {"scale": 1.0, "sqrt_k": False, "center": False}
    search_from = members_at + len(fields["members"])
    for token in fields["options"].split():
        column = line.index(token, search_from) + 1
        search_from = column
        option = parse(OPTION, token)
        if option is None:
            raise ParseError(f"expected 'key=value', got {token!r}", number, column)
        key, value = option["key"], option["value"]
        value_column = column + len(key) + 1
        if key == "scale":
            if value.replace(" ", "") == SQRT_K:
                options["sqrt_k"] = True
            else:
                scale = _parse_number(value, number, value_column)
                if scale == 0.0:
                    raise ParseError("scale must be nonzero", number, value_column)
                options["scale"] = scale
        elif key == "center":
            if value not in ("yes", "no"):
                raise ParseError(f"center is yes or no, got {value!r}", number, value_column)
            options["center"] = value == "yes"
        else:
            raise ParseError(f"unknown row option {key!r}", number, column)

    return RowDecl(
        members=tuple(members),
        name=name,
        scale=options["scale"],  # type: ignore[arg-type]
        sqrt_k=options["sqrt_k"],  # type: ignore[arg-type]
        center=options["center"],  # type: ignore[arg-type]
        line=number,
    )


def _parse_member(token: str, number: int, column: int) -> tuple[str, int]:
    compact = token.replace(" ", "")
    for sign in MULTIPLIERS:
        # counts are digits only, so the last multiplier sign is the separator
        name, found, count = compact.rpartition(sign)
        if found and name and count.isdigit():
            if not NAME.match(name):
                raise ParseError(f"invalid measure name {name!r}", number, column)
            if int(count) < 1:
                raise ParseError(f"member count must be positive, got {count}", number, column)
            return name, int(count)
    raise ParseError(f"expected '<measure>×<count>', got {token!r}", number, column)


def _parse_number(text: str, number: int, column: int) -> float:
    """Decimal, p/q or sqrt(x) factors, with an optional sign."""
    token = text.strip()
    sign = 1.0
    if token and token[0] in "+-":
        sign = -1.0 if token[0] == "-" else 1.0
        token = token[1:].strip()
    numerator, slash, denominator = token.partition("/")
    value = _parse_factor(numerator, number, column)
    if slash:
        divisor = _parse_factor(denominator, number, column)
        if divisor == 0.0:
            raise ParseError(f"division by zero in {text.strip()!r}", number, column)
        value /= divisor
    return sign * value


def _parse_factor(token: str, number: int, column: int) -> float:
    token = token.strip()
    root = parse(SQRT_FACTOR, token)
    try:
        if root is not None:
            radicand = float(root["radicand"])
            if radicand < 0:
                raise ParseError(f"square root of a negative number {token!r}", number, column)
            value = math.sqrt(radicand)
        else:
            value = float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", number, column) from None
    if not math.isfinite(value):
        raise ParseError(f"number must be finite, got {token!r}", number, column)
    return value


def _numbers(text: str, offset: int, number: int) -> tuple[float, ...]:
    return tuple(_parse_number(t, number, c) for t, c in _items(text, offset, number))


def _items(text: str, offset: int, number: int) -> list[tuple[str, int]]:
    """Comma-separated items with their 1-based columns; offset is where text starts."""
    if not text.strip():
        return []
    items = []
    position = 0
    for piece in text.split(","):
        stripped = piece.strip()
        items.append((stripped, offset + position + len(piece) - len(piece.lstrip()) + 1))
        position += len(piece) + 1
        if not stripped:
            raise ParseError("empty list item", number, items[-1][1])
    return items


def _check_name(line: str, number: int, name: str) -> None:
    if not NAME.match(name):
        raise ParseError(f"invalid name {name!r}", number, _column(line, name or ":", 0))


def _column(line: str, fragment: str, start: int) -> int:
    found = line.find(fragment, start)
    return (found if found >= 0 else start) + 1
