"""Per-round CSV reports and report comparison.

Columns are round, ca, ra_<attack>... and train_loss; accuracies are
fractions. The final row, labelled last5_mean, averages the last five rounds.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pyarrow as pa
import pyarrow.csv as pa_csv

from .exceptions import DomainError, MissingSummaryError, ReportError, SchemaMismatchError

SUMMARY_LABEL = "last5_mean"
SUMMARY_WINDOW = 5
ROUND_COLUMN = "round"


@dataclass(frozen=True)
class RoundReport:
    """Metrics of one federation round."""

    round_index: int
    clean_accuracy: float
    robust_accuracy: dict[str, float] = field(default_factory=dict)
    train_loss: float = 0.0

    def __post_init__(self) -> None:
        for name, value in (("ca", self.clean_accuracy), *self.robust_accuracy.items()):
            if not 0.0 <= value <= 1.0:
                raise DomainError(
                    message="accuracy is a fraction",
                    name=name,
                    value=value,
                    valid_range="in [0, 1]",
                )

    def metrics(self) -> dict[str, float]:
        row = {"ca": self.clean_accuracy}
        row.update({f"ra_{name}": value for name, value in self.robust_accuracy.items()})
        row["train_loss"] = self.train_loss
        return row


def summarize(reports: Sequence[RoundReport]) -> dict[str, float]:
    """Arithmetic mean of every metric over the last SUMMARY_WINDOW rounds."""
    window = [r.metrics() for r in reports[-SUMMARY_WINDOW:]]
    return {column: float(np.mean([row[column] for row in window])) for column in window[0]}


def write_report(reports: Sequence[RoundReport], path: Path | str) -> Path:
    """
    Write one row per round plus the summary row.

    Raises:
        DomainError: If there are no reports or their attack sets differ
        ReportError: If the file cannot be written
    """
    path = Path(path)
    if not reports:
        raise DomainError(
            message="no rounds to report", name="rounds", value=0, valid_range=">= 1"
        )
    attack_keys = list(reports[0].robust_accuracy)
    for r in reports:
        if list(r.robust_accuracy) != attack_keys:
            raise DomainError(
                message=(
                    f"round {r.round_index} reports attacks {list(r.robust_accuracy)}, "
                    f"expected {attack_keys}"
                ),
                name="attack set",
                value=r.round_index,
                valid_range="identical across rounds",
            )

    rows = [r.metrics() for r in reports]
    summary = summarize(reports)
    columns: dict[str, list] = {
        ROUND_COLUMN: [str(r.round_index) for r in reports] + [SUMMARY_LABEL]
    }
    for name in summary:
        columns[name] = [row[name] for row in rows] + [summary[name]]
    table = pa.table(
        {
            name: pa.array(values, type=pa.string() if name == ROUND_COLUMN else pa.float64())
            for name, values in columns.items()
        }
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pa_csv.write_csv(table, path, write_options=pa_csv.WriteOptions(quoting_style="none"))
    except (OSError, pa.ArrowException) as e:
        raise ReportError(message=f"cannot write report: {e}", path=path) from e
    return path


def read_report(path: Path | str) -> pa.Table:
    """Read a report with the round column as text and every metric as float64."""
    path = Path(path)
    try:
        table = pa_csv.read_csv(
            path,
            convert_options=pa_csv.ConvertOptions(column_types={ROUND_COLUMN: pa.string()}),
        )
    except (OSError, pa.ArrowException) as e:
        raise ReportError(message=f"cannot read report: {e}", path=path) from e
    if ROUND_COLUMN not in table.column_names:
        raise SchemaMismatchError(
            message="not a round report", path=path, missing_columns=[ROUND_COLUMN]
        )
    try:
        for i, name in enumerate(table.column_names):
            if name != ROUND_COLUMN:
                table = table.set_column(i, name, table.column(name).cast(pa.float64()))
    except pa.ArrowException as e:
        raise ReportError(message=f"non-numeric metric column: {e}", path=path) from e
    return table


def summary_row(table: pa.Table, path: Path) -> dict[str, float]:
    labels = table.column(ROUND_COLUMN).to_pylist()
    if SUMMARY_LABEL not in labels:
        raise MissingSummaryError(
            message="report is incomplete", path=path, summary_label=SUMMARY_LABEL
        )
    index = labels.index(SUMMARY_LABEL)
    return {
        name: table.column(name)[index].as_py()
        for name in table.column_names
        if name != ROUND_COLUMN
    }


@dataclass(frozen=True)
class ReportComparison:
    """Summary-row differences, first report minus second."""

    path_a: Path
    path_b: Path
    deltas: dict[str, float]

    def to_dict(self) -> dict[str, object]:
        return {"a": str(self.path_a), "b": str(self.path_b), "deltas": self.deltas}

    def render(self) -> str:
        lines = [f"{self.path_a.name} vs {self.path_b.name} ({SUMMARY_LABEL})"]
        width = max(len(name) for name in self.deltas) if self.deltas else 0
        for name, delta in self.deltas.items():
            lines.append(f"  {name:<{width}}  {delta:+.4f}")
        return "\n".join(lines)


def compare_report(path_a: Path | str, path_b: Path | str) -> ReportComparison:
    """
    Per-metric differences between the summary rows of two reports.

    Raises:
        SchemaMismatchError: If the reports have different columns (names them)
        MissingSummaryError: If either report lacks the summary row
    """
    path_a, path_b = Path(path_a), Path(path_b)
    table_a, table_b = read_report(path_a), read_report(path_b)
    columns_a, columns_b = table_a.column_names, table_b.column_names
    if set(columns_a) != set(columns_b):
        raise SchemaMismatchError(
            message="reports have different columns",
            path=path_b,
            missing_columns=sorted(set(columns_a) - set(columns_b)),
            extra_columns=sorted(set(columns_b) - set(columns_a)),
        )
    summary_a, summary_b = summary_row(table_a, path_a), summary_row(table_b, path_b)
    return ReportComparison(
        path_a=path_a,
        path_b=path_b,
        deltas={name: summary_a[name] - summary_b[name] for name in summary_a},
    )
