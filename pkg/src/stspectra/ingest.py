"""Loading, validation, and normalisation of multitype spatio-temporal events.

The canonical in-memory form is :class:`MultiPattern`: array-backed columns
(x, y, integer time index, integer type id, optional marks) over a rectangular
window and T discrete time steps.  Analysis modules expect coordinates
rescaled to the unit square; marks are never rescaled.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import (
    DomainError,
    EmptyInputError,
    RowError,
    SchemaError,
    ValidationError,
)

__all__ = [
    "Window",
    "Event",
    "MultiPattern",
    "Component",
    "LoadReport",
    "load_events",
    "export_events",
    "rescale_to_unit_square",
    "bin_times",
    "parse_duration",
]

REQUIRED_FIELDS = ("x", "y", "time", "type")

_DURATION_UNITS = {
    "s": 1.0,
    "min": 60.0,
    "h": 3600.0,
    "d": 86400.0,
    "w": 604800.0,
}


@dataclass(frozen=True)
class Window:
    """Rectangular observation window plus the discrete time horizon.

    ``source_extent`` keeps the pre-rescale (x_min, x_max, y_min, y_max) so
    reports can quote intensities in original units after normalisation.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    T: int
    bin_origin: datetime | None = None
    bin_width: timedelta | None = None
    source_extent: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError(
                "degenerate window: zero spatial extent "
                f"(x: {self.x_min}..{self.x_max}, y: {self.y_min}..{self.y_max})"
            )
        if self.T < 1:
            raise ValidationError(f"window needs T >= 1, got {self.T}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def is_unit_square(self) -> bool:
        return (self.x_min, self.x_max, self.y_min, self.y_max) == (0.0, 1.0, 0.0, 1.0)

    @property
    def source_area(self) -> float:
        if self.source_extent is None:
            return self.area
        x0, x1, y0, y1 = self.source_extent
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class Event:
    """One event row; mainly a convenience for constructing small fixtures."""

    x: float
    y: float
    t: int
    type_id: int
    mark: float | None = None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MultiPattern:
    """A multitype spatio-temporal point pattern on a shared window.

    Parameters
    ----------
    x, y : float arrays, one entry per event, inside the window.
    t : int array, time-step index of each event, in 1..T.
    type_id : int array, contiguous component ids 1..d in first-appearance
        order of the original labels.
    labels : tuple of d strings naming the components.
    window : the shared :class:`Window`.
    marks : optional float array aligned with the events.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    type_id: np.ndarray
    labels: tuple[str, ...]
    window: Window
    marks: np.ndarray | None = None
    _allow_missing_types: bool = field(default=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", _readonly(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "t", _readonly(np.asarray(self.t, dtype=np.int64)))
        object.__setattr__(
            self, "type_id", _readonly(np.asarray(self.type_id, dtype=np.int64))
        )
        if self.marks is not None:
            object.__setattr__(
                self, "marks", _readonly(np.asarray(self.marks, dtype=float))
            )
        n = self.x.size
        for name in ("y", "t", "type_id"):
            if getattr(self, name).size != n:
                raise ValidationError(f"column '{name}' length != {n}")
        if self.marks is not None and self.marks.size != n:
            raise ValidationError("marks not aligned with events")
        if n == 0:
            raise EmptyInputError("pattern holds no events")
        w = self.window
        if (
            self.x.min() < w.x_min
            or self.x.max() > w.x_max
            or self.y.min() < w.y_min
            or self.y.max() > w.y_max
        ):
            raise DomainError("events fall outside the window")
        if self.t.min() < 1 or self.t.max() > w.T:
            raise ValidationError(
                f"time indices must lie in 1..{w.T}, got "
                f"{self.t.min()}..{self.t.max()}"
            )
        d = len(self.labels)
        if d < 2 and not self._allow_missing_types:
            raise ValidationError(f"need at least 2 components, got {d}")
        if self.type_id.min() < 1 or self.type_id.max() > d:
            raise ValidationError("type ids must be contiguous 1..d")
        if not self._allow_missing_types:
            present = np.unique(self.type_id)
            if present.size != d:
                missing = sorted(set(range(1, d + 1)) - set(present.tolist()))
                raise ValidationError(f"components never observed: {missing}")

    # -- basic views ---------------------------------------------------

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def d(self) -> int:
        return len(self.labels)

    @property
    def T(self) -> int:
        return self.window.T

    @property
    def counts(self) -> np.ndarray:
        """Events per component, index 0 holding component 1."""
        return np.bincount(self.type_id, minlength=self.d + 1)[1:]

    @property
    def has_marks(self) -> bool:
        return self.marks is not None

    def component(self, i: int) -> "Component":
        """Events of component ``i`` (1-based) as a single-type view."""
        if not 1 <= i <= self.d:
            raise ValidationError(f"component index {i} outside 1..{self.d}")
        sel = self.type_id == i
        return Component(
            x=self.x[sel],
            y=self.y[sel],
            t=self.t[sel],
            marks=None if self.marks is None else self.marks[sel],
            label=self.labels[i - 1],
            window=self.window,
        )

    def pooled(self) -> "Component":
        """All events regardless of type (the ground pattern)."""
        return Component(
            x=self.x,
            y=self.y,
            t=self.t,
            marks=self.marks,
            label="pooled",
            window=self.window,
        )

    def slice_time(self, step: int) -> "MultiPattern":
        """The purely spatial pattern of one time step (T becomes 1).

        Components absent from the slice are kept in the label set; the
        invariant that every component occurs is relaxed for slices.
        """
        if not 1 <= step <= self.T:
            raise ValidationError(f"time step {step} outside 1..{self.T}")
        sel = self.t == step
        if not sel.any():
            raise EmptyInputError(f"time step {step} holds no events")
        w = replace(self.window, T=1)
        return MultiPattern(
            x=self.x[sel],
            y=self.y[sel],
            t=np.ones(int(sel.sum()), dtype=np.int64),
            type_id=self.type_id[sel],
            labels=self.labels,
            window=w,
            marks=None if self.marks is None else self.marks[sel],
            _allow_missing_types=True,
        )

    def with_marks(self, marks: np.ndarray) -> "MultiPattern":
        return replace(self, marks=np.asarray(marks, dtype=float))

    def equals(self, other: "MultiPattern") -> bool:
        """Exact equality of events, labels, and horizon (window metadata aside)."""
        if self.labels != other.labels or self.T != other.T:
            return False
        if self.has_marks != other.has_marks:
            return False
        same = (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.type_id, other.type_id)
        )
        if same and self.has_marks:
            same = np.array_equal(self.marks, other.marks)
        return same


@dataclass(frozen=True, eq=False)
class Component:
    """Single-component view used by the classical estimators."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    marks: np.ndarray | None
    label: str
    window: Window

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def T(self) -> int:
        return self.window.T

    @property
    def has_marks(self) -> bool:
        return self.marks is not None


@dataclass(frozen=True)
class LoadReport:
    """What happened during a load: row counts, dedup, labels, binning."""

    n_rows: int
    n_events: int
    duplicates_removed: int
    labels: tuple[str, ...]
    T: int
    time_mode: str
    bin_origin: datetime | None = None
    bin_width: timedelta | None = None


def parse_duration(text: str) -> timedelta:
    """Parse a duration like ``30d``, ``12h``, ``45min``, ``2w``, ``90s``."""
    m = re.fullmatch(r"\s*([0-9]+(?:\.[0-9]+)?)\s*(s|min|h|d|w)\s*", text)
    if not m:
        raise ValidationError(
            f"cannot parse duration {text!r}; use <number><s|min|h|d|w>"
        )
    value = float(m.group(1)) * _DURATION_UNITS[m.group(2)]
    if value <= 0:
        raise ValidationError("bin width must be positive")
    return timedelta(seconds=value)


def bin_times(
    timestamps: list[datetime],
    bin_width: timedelta,
    origin: datetime | None = None,
) -> tuple[np.ndarray, int]:
    """Map timestamps to 1-based bin indices: t = 1 + floor((ts-origin)/width).

    The default origin is the earliest timestamp.  Division is exact integer
    arithmetic on microseconds, so boundary timestamps bin deterministically.
    """
    if not timestamps:
        raise EmptyInputError("no timestamps to bin")
    if origin is None:
        origin = min(timestamps)
    width_us = round(bin_width.total_seconds() * 1e6)
    if width_us <= 0:
        raise ValidationError("bin width must be positive")
    idx = np.empty(len(timestamps), dtype=np.int64)
    for k, ts in enumerate(timestamps):
        try:
            delta = ts - origin
        except TypeError as exc:
            raise ValidationError(
                "mixed timezone-aware and naive timestamps"
            ) from exc
        delta_us = round(delta.total_seconds() * 1e6)
        if delta_us < 0:
            raise ValidationError(
                f"timestamp {ts.isoformat()} precedes the bin origin "
                f"{origin.isoformat()}"
            )
        idx[k] = 1 + delta_us // width_us
    return idx, int(idx.max())


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise RowError(line, f"column '{column}': cannot parse {text!r} as a number")
    if not math.isfinite(v):
        raise RowError(line, f"column '{column}': non-finite value {text!r}")
    return v


def load_events(
    path: str | Path,
    columns: dict[str, str] | None = None,
    time_is_index: bool = False,
    bin_width: timedelta | str | None = None,
    bin_origin: datetime | None = None,
    window: tuple[float, float, float, float] | None = None,
) -> tuple[MultiPattern, LoadReport]:
    """Load events from a headed CSV file.

    Required columns (after remapping through ``columns``) are x, y, time and
    type; a mark column is picked up when mapped or literally named ``mark``.
    Time is either ISO-8601 (binned with ``bin_width``/``bin_origin``) or,
    with ``time_is_index``, a pre-binned integer >= 1 taken as-is.

    Exact duplicate rows (same x, y, time, type) are dropped, keeping the
    first; the count is reported.  Type labels become ids 1..d in order of
    first appearance.  The window defaults to the data bounding box.
    """
    colmap = dict(zip(REQUIRED_FIELDS, REQUIRED_FIELDS))
    colmap["mark"] = "mark"
    if columns:
        unknown = set(columns) - {"x", "y", "time", "type", "mark"}
        if unknown:
            raise SchemaError(f"unknown column roles: {sorted(unknown)}")
        colmap.update(columns)
    if isinstance(bin_width, str):
        bin_width = parse_duration(bin_width)

    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise EmptyInputError(f"{path}: file is empty")
        for role in REQUIRED_FIELDS:
            if colmap[role] not in header:
                raise SchemaError(
                    f"{path}: missing required column '{colmap[role]}' (role: {role})"
                )
        has_marks = colmap["mark"] in header
        explicit_mark = columns is not None and "mark" in columns
        if explicit_mark and not has_marks:
            raise SchemaError(f"{path}: missing mark column '{colmap['mark']}'")

        xs: list[float] = []
        ys: list[float] = []
        raw_times: list[str] = []
        types: list[str] = []
        marks: list[float] = []
        seen: set[tuple] = set()
        duplicates = 0
        n_rows = 0
        for row in reader:
            line = reader.line_num
            n_rows += 1
            x = _parse_float(row[colmap["x"]], colmap["x"], line)
            y = _parse_float(row[colmap["y"]], colmap["y"], line)
            time_text = (row[colmap["time"]] or "").strip()
            if not time_text:
                raise RowError(line, "empty time value")
            label = (row[colmap["type"]] or "").strip()
            if not label:
                raise RowError(line, "empty type label")
            key = (x, y, time_text, label)
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            xs.append(x)
            ys.append(y)
            raw_times.append(time_text)
            types.append(label)
            if has_marks:
                marks.append(_parse_float(row[colmap["mark"]], colmap["mark"], line))

    if not xs:
        raise EmptyInputError(f"{path}: no data rows")

    # Time handling: pre-binned integers or ISO-8601 timestamps.
    if time_is_index:
        t = np.empty(len(raw_times), dtype=np.int64)
        for k, text in enumerate(raw_times):
            try:
                t[k] = int(text)
            except ValueError:
                raise ValidationError(
                    f"time value {text!r} is not an integer index; "
                    "drop --time-is-index to parse timestamps"
                )
        if t.min() < 1:
            raise ValidationError(
                f"pre-binned time indices must be >= 1 (got {t.min()}); "
                "shift the index column"
            )
        T = int(t.max())
        origin = width = None
        time_mode = "index"
    else:
        if bin_width is None:
            raise ValidationError(
                "timestamp data needs a bin width (or pass time_is_index "
                "for pre-binned integers)"
            )
        stamps = []
        for k, text in enumerate(raw_times):
            try:
                stamps.append(datetime.fromisoformat(text))
            except ValueError:
                raise ValidationError(
                    f"time value {text!r} is not ISO-8601; "
                    "use --time-is-index for pre-binned integers"
                )
        t, T = bin_times(stamps, bin_width, bin_origin)
        origin = bin_origin if bin_origin is not None else min(stamps)
        width = bin_width
        time_mode = "binned"

    x_arr = np.asarray(xs)
    y_arr = np.asarray(ys)
    if window is None:
        extent = (
            float(x_arr.min()),
            float(x_arr.max()),
            float(y_arr.min()),
            float(y_arr.max()),
        )
    else:
        extent = tuple(float(v) for v in window)

    labels: list[str] = []
    label_ids: dict[str, int] = {}
    type_id = np.empty(len(types), dtype=np.int64)
    for k, label in enumerate(types):
        if label not in label_ids:
            labels.append(label)
            label_ids[label] = len(labels)
        type_id[k] = label_ids[label]

    win = Window(
        x_min=extent[0],
        x_max=extent[1],
        y_min=extent[2],
        y_max=extent[3],
        T=T,
        bin_origin=origin,
        bin_width=width,
    )
    pattern = MultiPattern(
        x=x_arr,
        y=y_arr,
        t=t,
        type_id=type_id,
        labels=tuple(labels),
        window=win,
        marks=np.asarray(marks) if has_marks else None,
    )
    report = LoadReport(
        n_rows=n_rows,
        n_events=pattern.n,
        duplicates_removed=duplicates,
        labels=pattern.labels,
        T=T,
        time_mode=time_mode,
        bin_origin=origin,
        bin_width=width,
    )
    return pattern, report


def rescale_to_unit_square(pattern: MultiPattern) -> MultiPattern:
    """Affinely map the window onto [0,1]^2; idempotent on unit windows.

    Marks and times are untouched; the original extent is retained on the
    window for reporting in source units.
    """
    w = pattern.window
    if w.is_unit_square:
        return pattern
    sx = w.x_max - w.x_min
    sy = w.y_max - w.y_min
    source = w.source_extent or (w.x_min, w.x_max, w.y_min, w.y_max)
    new_window = Window(
        x_min=0.0,
        x_max=1.0,
        y_min=0.0,
        y_max=1.0,
        T=w.T,
        bin_origin=w.bin_origin,
        bin_width=w.bin_width,
        source_extent=source,
    )
    return MultiPattern(
        x=np.clip((pattern.x - w.x_min) / sx, 0.0, 1.0),
        y=np.clip((pattern.y - w.y_min) / sy, 0.0, 1.0),
        t=pattern.t,
        type_id=pattern.type_id,
        labels=pattern.labels,
        window=new_window,
        marks=pattern.marks,
        _allow_missing_types=pattern._allow_missing_types,
    )


def export_events(pattern: MultiPattern, path: str | Path) -> None:
    """Write events as the ingest CSV schema with pre-binned integer times.

    Floats carry 17 significant digits, so load -> export -> load (with
    ``time_is_index=True``) reproduces the pattern exactly.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["x", "y", "time", "type"]
        if pattern.has_marks:
            header.append("mark")
        writer.writerow(header)
        for k in range(pattern.n):
            row = [
                f"{pattern.x[k]:.17g}",
                f"{pattern.y[k]:.17g}",
                str(int(pattern.t[k])),
                pattern.labels[pattern.type_id[k] - 1],
            ]
            if pattern.has_marks:
                row.append(f"{pattern.marks[k]:.17g}")
            writer.writerow(row)
