"""Exception hierarchy for the federated adversarial-training simulator."""

from dataclasses import dataclass
from pathlib import Path


@dataclass
class FatccError(Exception):
    """Base exception for simulator errors."""

    message: str

    def __str__(self) -> str:
        return self.message


@dataclass
class ShapeError(FatccError):
    """Raised when array dimensions do not chain."""

    layer: str
    expected: tuple[int, ...] | int
    actual: tuple[int, ...] | int

    def __str__(self) -> str:
        return (
            f"Shape mismatch at {self.layer}: {self.message}\n"
            f"Expected: {self.expected}\n"
            f"Actual: {self.actual}"
        )


@dataclass
class DomainError(FatccError):
    """Raised when a value lies outside its valid domain (e.g. a class index)."""

    name: str
    value: float | int
    valid_range: str

    def __str__(self) -> str:
        return f"Invalid {self.name}: {self.value} (must be {self.valid_range})\n{self.message}"


@dataclass
class NumericalError(FatccError):
    """Raised when a loss or parameter becomes non-finite."""

    stage: str

    def __str__(self) -> str:
        return f"Non-finite value during {self.stage}: {self.message}"


@dataclass
class ConfigError(FatccError):
    """Raised when an experiment configuration cannot be parsed or validated."""

    field_name: str
    line_number: int | None = None

    def __str__(self) -> str:
        location = f"line {self.line_number}, " if self.line_number else ""
        return f"Invalid config ({location}field '{self.field_name}'): {self.message}"


@dataclass
class DataLoadError(FatccError):
    """Base exception for dataset loading errors."""

    path: Path

    def __str__(self) -> str:
        return f"[{self.path.name}] {self.message}"


@dataclass
class IdxFormatError(DataLoadError):
    """Raised when an IDX file carries the wrong magic number."""

    expected_magic: int = 0
    observed_magic: int = 0

    def __str__(self) -> str:
        return (
            f"[{self.path.name}] Bad IDX magic: expected {self.expected_magic:#010x}, "
            f"got {self.observed_magic:#010x}"
        )


@dataclass
class IdxTruncatedError(DataLoadError):
    """Raised when an IDX file ends before its declared payload (an I/O error)."""

    expected_bytes: int = 0
    actual_bytes: int = 0

    def __str__(self) -> str:
        if not self.expected_bytes:
            return f"[{self.path.name}] Truncated IDX file: {self.message}"
        return (
            f"[{self.path.name}] Truncated IDX file: expected {self.expected_bytes:,} bytes, "
            f"got {self.actual_bytes:,}"
        )


@dataclass
class ConsistencyError(DataLoadError):
    """Raised when image and label files disagree on the example count."""

    image_count: int = 0
    label_count: int = 0

    def __str__(self) -> str:
        return (
            f"[{self.path.name}] Image/label count mismatch: "
            f"{self.image_count:,} images, {self.label_count:,} labels"
        )


@dataclass
class ClientUpdateError(FatccError):
    """Raised when a client's local update fails, aborting the round."""

    round_index: int
    client_id: int

    def __str__(self) -> str:
        return f"Client {self.client_id} failed in round {self.round_index}: {self.message}"


@dataclass
class ReportError(FatccError):
    """Base exception for CSV report errors."""

    path: Path

    def __str__(self) -> str:
        return f"[{self.path.name}] {self.message}"


@dataclass
class SchemaMismatchError(ReportError):
    """Raised when two reports do not share the same columns."""

    missing_columns: list[str] | None = None
    extra_columns: list[str] | None = None

    def __str__(self) -> str:
        parts = [f"[{self.path.name}] Schema mismatch:"]
        if self.missing_columns:
            parts.append(f"missing columns: {sorted(self.missing_columns)}")
        if self.extra_columns:
            parts.append(f"extra columns: {sorted(self.extra_columns)}")
        return " ".join(parts)


@dataclass
class MissingSummaryError(ReportError):
    """Raised when a report has no summary row."""

    summary_label: str = ""

    def __str__(self) -> str:
        return f"[{self.path.name}] No '{self.summary_label}' summary row: {self.message}"
