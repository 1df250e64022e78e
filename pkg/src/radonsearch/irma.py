"""Hierarchical 4-axis label codes and the per-image retrieval error metric.

A code such as ``1121-127-700-500`` carries four axes (technical,
directional, anatomical, biological) separated by ``-``.  Retrieval quality
is scored per query as a dissimilarity in [0, 1] between the query's code
and the retrieved image's code, then accumulated over all queries.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import ParseError, ValidationError

if TYPE_CHECKING:
    from .images import DatasetManifest

AXIS_COUNT = 4
AXIS_NAMES = ("technical", "directional", "anatomical", "biological")
WILDCARD = "*"


@dataclass(frozen=True)
class IrmaCode:
    """Parsed multi-axis label code.

    ``axes`` holds one character sequence per axis; ``raw`` keeps the
    original dash-separated string.
    """

    axes: tuple[str, ...]
    raw: str

    def __str__(self) -> str:
        return self.raw


def parse_code(s: str) -> IrmaCode:
    """Parse a dash-separated code string into an :class:`IrmaCode`.

    Args:
        s: nonempty string with exactly four ``-``-separated axes made of
            alphanumeric characters or the ``*`` wildcard.

    Raises:
        ParseError: wrong axis count, empty axis, or illegal character.
    """
    if not s:
        raise ParseError("empty code string")
    axes = tuple(s.split("-"))
    if len(axes) != AXIS_COUNT:
        raise ParseError(f"code {s!r} has {len(axes)} axes, expected {AXIS_COUNT}")
    for axis in axes:
        if not axis:
            raise ParseError(f"code {s!r} has an empty axis")
        for ch in axis:
            if not (ch.isalnum() or ch == WILDCARD):
                raise ParseError(f"code {s!r} contains illegal character {ch!r}")
    return IrmaCode(axes=axes, raw=s)


@dataclass
class CodeInventory:
    """Per-axis branching counts observed in a code collection.

    ``branching`` maps ``(axis_index, prefix)`` to the number of distinct
    characters seen immediately after ``prefix`` on that axis.  Slots never
    observed report a branching of 1.
    """

    branching: dict[tuple[int, str], int] = field(default_factory=dict)

    def branching_at(self, axis: int, prefix: str) -> int:
        return max(self.branching.get((axis, prefix), 1), 1)

    def to_json(self, path: str | Path) -> None:
        """Persist as JSON with ``"axis:prefix"`` keys."""
        payload = {f"{a}:{p}": b for (a, p), b in sorted(self.branching.items())}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    @classmethod
    def from_json(cls, path: str | Path) -> "CodeInventory":
        payload = json.loads(Path(path).read_text())
        branching: dict[tuple[int, str], int] = {}
        for key, count in payload.items():
            axis_str, _, prefix = key.partition(":")
            branching[(int(axis_str), prefix)] = int(count)
        return cls(branching=branching)


def build_inventory(codes: Iterable[IrmaCode]) -> CodeInventory:
    """Count distinct child labels per (axis, position, prefix) slot."""
    observed: dict[tuple[int, str], set[str]] = {}
    count = 0
    for code in codes:
        count += 1
        for a, axis in enumerate(code.axes):
            for i, ch in enumerate(axis):
                observed.setdefault((a, axis[:i]), set()).add(ch)
    if count == 0:
        raise ValidationError("cannot build an inventory from zero codes")
    return CodeInventory(branching={k: len(v) for k, v in observed.items()})


def image_error(
    truth: IrmaCode,
    predicted: IrmaCode,
    inventory: CodeInventory,
    wildcard_half_penalty: bool = True,
) -> float:
    """Hierarchical dissimilarity in [0, 1] between two codes.

    Each axis is scanned left to right.  A position is penalized by
    ``(1/b_i) * (1/i) * delta_i`` where ``b_i`` is the branching factor at
    that slot along the truth code, ``i`` the 1-based position, and
    ``delta_i`` is 0 for a correct character, 0.5 for a predicted wildcard
    and 1 for a wrong character.  Once a position is wrong (or wildcarded)
    every later position on that axis counts as fully wrong.  Axis errors
    are normalized by the maximal attainable penalty and averaged.

    Args:
        truth: the ground-truth code of the query image.
        predicted: the code of the retrieved image.
        inventory: branching counts used for the ``1/b_i`` weights.
        wildcard_half_penalty: when False, a predicted ``*`` counts as a
            plain mismatch (delta 1) instead of 0.5.

    Raises:
        ValidationError: axis counts or axis lengths differ.
    """
    if len(truth.axes) != len(predicted.axes):
        raise ValidationError(
            f"axis count mismatch: {len(truth.axes)} vs {len(predicted.axes)}"
        )
    axis_errors = []
    for a, (t_axis, p_axis) in enumerate(zip(truth.axes, predicted.axes)):
        if len(t_axis) != len(p_axis):
            raise ValidationError(
                f"axis {a} length mismatch: {t_axis!r} vs {p_axis!r}"
            )
        numerator = 0.0
        denominator = 0.0
        wrong = False
        for i, (t_ch, p_ch) in enumerate(zip(t_axis, p_axis)):
            weight = (1.0 / inventory.branching_at(a, t_axis[:i])) * (1.0 / (i + 1))
            denominator += weight
            if wrong:
                delta = 1.0
            elif p_ch == t_ch:
                delta = 0.0
            elif p_ch == WILDCARD:
                delta = 0.5 if wildcard_half_penalty else 1.0
                wrong = True
            else:
                delta = 1.0
                wrong = True
            numerator += weight * delta
        axis_errors.append(numerator / denominator if denominator > 0.0 else 0.0)
    return sum(axis_errors) / len(axis_errors)


@dataclass(frozen=True)
class QueryError:
    """Score of one retrieval: the query, what came back, and the error."""

    query_id: str
    retrieved_id: str
    error: float


@dataclass
class ErrorReport:
    """Accumulated retrieval errors over a query set."""

    per_query: list[QueryError]
    total_error: float
    accuracy_estimate: float

    @property
    def query_count(self) -> int:
        return len(self.per_query)


def make_report(per_query: Sequence[QueryError]) -> ErrorReport:
    """Summarize per-query errors into totals and the accuracy estimate."""
    total = float(sum(q.error for q in per_query))
    n = len(per_query)
    accuracy = 1.0 - total / n if n else 1.0
    return ErrorReport(per_query=list(per_query), total_error=total, accuracy_estimate=accuracy)


def evaluate(
    results: Sequence[tuple[str, str]],
    manifest: "DatasetManifest",
    inventory: CodeInventory,
    wildcard_half_penalty: bool = True,
) -> ErrorReport:
    """Score (query_id, retrieved_id) pairs against a dataset manifest.

    Raises:
        KeyError: an id in ``results`` is not present in the manifest.
    """
    codes = {entry.image_id: entry.irma_code for entry in manifest.entries}
    per_query = []
    for query_id, retrieved_id in results:
        if query_id not in codes:
            raise KeyError(f"unknown query id {query_id!r}")
        if retrieved_id not in codes:
            raise KeyError(f"unknown retrieved id {retrieved_id!r}")
        err = image_error(
            codes[query_id], codes[retrieved_id], inventory, wildcard_half_penalty
        )
        per_query.append(QueryError(query_id, retrieved_id, err))
    return make_report(per_query)


def write_error_report(
    report: ErrorReport, csv_path: str | Path, json_path: str | Path
) -> None:
    """Emit the per-query CSV and the JSON summary."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "retrieved_id", "error"])
        for q in report.per_query:
            writer.writerow([q.query_id, q.retrieved_id, repr(q.error)])
    summary = {
        "total_error": report.total_error,
        "accuracy_estimate": report.accuracy_estimate,
        "query_count": report.query_count,
    }
    Path(json_path).write_text(json.dumps(summary, indent=2))
