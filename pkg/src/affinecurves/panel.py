"""Observation panels, contract calendars, day counts and yield transforms.

Time conventions
----------------
* Year fractions are ACT/360 from a fixed epoch; a calendar date ``d`` maps to
  ``(d - epoch).days / 360``.
* Business days are Monday-Friday net of an optional holiday list.
* Overnight fixings carry day-count weights ``d_i = (next business day -
  fixing date)/360``: 1/360 on a normal day, 3/360 on Fridays, longer over
  holidays.  A reference period that starts and ends on business days
  therefore satisfies ``sum d_i = T - S`` exactly.
* Spot LIBOR/repo tenors are the fixed year fractions 0.25 and 0.5.

Panel format
------------
A panel is a rectangular CSV: first column ``date`` (ISO), remaining columns
named by a small grammar

    SOFR1M:YYYY-MM   one-month compounded-average futures, contract month
    SOFR3M:YYYY-MM   three-month compounded futures, reference quarter start
    FF:YYYY-MM       unsecured-overnight futures, contract month
    ED:YYYY-MM       term-unsecured futures, accrual quarter start
    LIBOR:3M|6M      spot term unsecured rate
    REPO:3M|6M       spot term repo rate

Cells are rate quotes (decimals by default; percent and 100*(1-rate) price
quoting are supported through :class:`PanelSchema`); an empty cell marks a
missing observation.  Realized overnight fixings live in a companion
``*_fixings.csv`` with columns ``date,sofr,effr``.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "PanelError",
    "PanelSchema",
    "PanelColumn",
    "ContractLadder",
    "ObservationPanel",
    "year_fraction",
    "is_business_day",
    "next_business_day",
    "first_business_day_on_or_after",
    "business_days",
    "day_count_weights",
    "compound_fixings",
    "average_fixings",
    "yield_from_rate",
    "rate_from_yield",
    "load_panel",
    "save_panel",
]

EPOCH = dt.date(2000, 1, 1)

QUARTER_MONTHS = (3, 6, 9, 12)

SOFR_GROUP = ("SOFR1M", "SOFR3M")
EFFR_GROUP = ("FF",)
LIBOR_GROUP = ("ED", "LIBOR", "REPO")

TENOR_YEARS = {"3M": 0.25, "6M": 0.5}


class PanelError(ValueError):
    """Malformed panel input; message carries row/column coordinates."""


def year_fraction(d: dt.date) -> float:
    """ACT/360 year fraction of a calendar date from the module epoch."""
    return (d - EPOCH).days / 360.0


def is_business_day(d: dt.date, holidays: frozenset[dt.date] = frozenset()) -> bool:
    return d.weekday() < 5 and d not in holidays


def next_business_day(d: dt.date, holidays: frozenset[dt.date] = frozenset()) -> dt.date:
    out = d + dt.timedelta(days=1)
    while not is_business_day(out, holidays):
        out += dt.timedelta(days=1)
    return out


def first_business_day_on_or_after(
    d: dt.date, holidays: frozenset[dt.date] = frozenset()
) -> dt.date:
    while not is_business_day(d, holidays):
        d += dt.timedelta(days=1)
    return d


def business_days(
    start: dt.date, end: dt.date, holidays: frozenset[dt.date] = frozenset()
) -> list[dt.date]:
    """Business days in the half-open interval [start, end)."""
    out = []
    d = first_business_day_on_or_after(start, holidays)
    while d < end:
        out.append(d)
        d = next_business_day(d, holidays)
    return out


def day_count_weights(
    dates: list[dt.date], holidays: frozenset[dt.date] = frozenset()
) -> list[float]:
    """Weight of each fixing date: calendar days covered until the next
    business day, over 360."""
    return [(next_business_day(d, holidays) - d).days / 360.0 for d in dates]


def compound_fixings(values, weights) -> float:
    """Realized compounded rate (prod(1 + d_i r_i) - 1) / sum(d_i)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
        raise ValueError("values and weights must be equal-length non-empty 1-d")
    growth = float(np.prod(1.0 + weights * values))
    return (growth - 1.0) / float(weights.sum())


def average_fixings(values, weights) -> float:
    """Day-count weighted arithmetic average sum(d_i r_i) / sum(d_i)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
        raise ValueError("values and weights must be equal-length non-empty 1-d")
    return float(np.dot(weights, values) / weights.sum())


def yield_from_rate(rate: float, accrual: float):
    """Continuously-compounded equivalent yield log(1 + accrual*rate)/accrual."""
    return np.log1p(accrual * np.asarray(rate, dtype=float)) / accrual


def rate_from_yield(y: float, accrual: float):
    """Inverse of :func:`yield_from_rate`."""
    return np.expm1(accrual * np.asarray(y, dtype=float)) / accrual


# ---------------------------------------------------------------------------
# Columns and ladders
# ---------------------------------------------------------------------------

def _month_add(year: int, month: int, k: int) -> tuple[int, int]:
    m = month - 1 + k
    return year + m // 12, m % 12 + 1


@dataclass(frozen=True)
class PanelColumn:
    """One observable: a specific futures contract or a spot tenor."""

    kind: str                      # SOFR1M | SOFR3M | FF | ED | LIBOR | REPO
    label: str                     # full header token, e.g. "SOFR3M:2020-03"
    start: dt.date | None = None   # accrual start (futures only)
    end: dt.date | None = None     # accrual end (futures only)
    tenor: str | None = None       # "3M" | "6M" (spot only)

    @property
    def is_futures(self) -> bool:
        return self.kind in ("SOFR1M", "SOFR3M", "FF", "ED")

    @property
    def is_averaging(self) -> bool:
        """Contracts whose quote is already affine in the state (no yield
        transform): the arithmetic-average overnight futures."""
        return self.kind in ("SOFR1M", "FF")

    @property
    def tenor_years(self) -> float:
        if self.tenor is None:
            raise ValueError(f"column {self.label} has no spot tenor")
        return TENOR_YEARS[self.tenor]

    def accrual(self) -> float:
        """Accrual length T - S in years (ACT/360 for futures)."""
        if self.is_futures:
            return year_fraction(self.end) - year_fraction(self.start)
        return self.tenor_years

    @property
    def sigma_group(self) -> str:
        if self.kind in SOFR_GROUP:
            return "sofr"
        if self.kind in EFFR_GROUP:
            return "effr"
        return "libor"


def parse_column(label: str, holidays: frozenset[dt.date] = frozenset()) -> PanelColumn:
    kind, _, rest = label.partition(":")
    if kind in ("LIBOR", "REPO"):
        if rest not in TENOR_YEARS:
            raise PanelError(f"column {label!r}: tenor must be one of {sorted(TENOR_YEARS)}")
        return PanelColumn(kind=kind, label=label, tenor=rest)
    if kind in ("SOFR1M", "SOFR3M", "FF", "ED"):
        try:
            year, month = (int(part) for part in rest.split("-"))
            first = dt.date(year, month, 1)
        except (ValueError, TypeError) as exc:
            raise PanelError(f"column {label!r}: expected {kind}:YYYY-MM") from exc
        months = 1 if kind in ("SOFR1M", "FF") else 3
        end_first = dt.date(*_month_add(year, month, months), 1)
        return PanelColumn(
            kind=kind,
            label=label,
            start=first_business_day_on_or_after(first, holidays),
            end=first_business_day_on_or_after(end_first, holidays),
        )
    raise PanelError(f"column {label!r}: unknown instrument kind {kind!r}")


@dataclass(frozen=True)
class ContractLadder:
    """Rolling rule mapping an observation date to the quoted contracts.

    Counts default to the liquid short end: five one- and three-month
    compounded-overnight contracts, twelve unsecured-overnight contracts,
    four term-unsecured contracts, plus the two spot tenors each for term
    unsecured and term repo.
    """

    n_sofr1m: int = 5
    n_sofr3m: int = 5
    n_ff: int = 12
    n_ed: int = 4
    libor_tenors: tuple[str, ...] = ("3M", "6M")
    repo_tenors: tuple[str, ...] = ("3M", "6M")
    holidays: frozenset[dt.date] = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("n_sofr1m", "n_sofr3m", "n_ff", "n_ed"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def columns_for(self, date: dt.date) -> list[PanelColumn]:
        """Unexpired contracts quoted on ``date``, nearest first."""
        out: list[PanelColumn] = []
        for k in range(self.n_sofr1m):
            y, m = _month_add(date.year, date.month, k)
            out.append(parse_column(f"SOFR1M:{y:04d}-{m:02d}", self.holidays))
        q_year, q_month = self._quarter_containing(date)
        for k in range(self.n_sofr3m):
            y, m = _month_add(q_year, q_month, 3 * k)
            out.append(parse_column(f"SOFR3M:{y:04d}-{m:02d}", self.holidays))
        for k in range(self.n_ff):
            y, m = _month_add(date.year, date.month, k)
            out.append(parse_column(f"FF:{y:04d}-{m:02d}", self.holidays))
        # Term-unsecured futures settle at the accrual start: only contracts
        # with start strictly after the observation date are alive.
        k = 0
        added = 0
        while added < self.n_ed:
            y, m = _month_add(q_year, q_month, 3 * k)
            col = parse_column(f"ED:{y:04d}-{m:02d}", self.holidays)
            if col.start > date:
                out.append(col)
                added += 1
            k += 1
        for tenor in self.libor_tenors:
            out.append(parse_column(f"LIBOR:{tenor}"))
        for tenor in self.repo_tenors:
            out.append(parse_column(f"REPO:{tenor}"))
        return out

    @staticmethod
    def _quarter_containing(date: dt.date) -> tuple[int, int]:
        """Quarter start month (in the Mar/Jun/Sep/Dec cycle) whose quarter
        contains ``date``."""
        month = QUARTER_MONTHS[(date.month - 3) // 3] if date.month >= 3 else 12
        year = date.year if date.month >= 3 else date.year - 1
        return year, month


# ---------------------------------------------------------------------------
# The panel container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanelSchema:
    """Quoting conventions of a panel file."""

    unit: str = "decimal"            # "decimal" | "percent"
    futures_quoting: str = "rate"    # "rate" | "price" (100*(1 - rate))

    def __post_init__(self):
        if self.unit not in ("decimal", "percent"):
            raise PanelError(f"unknown unit {self.unit!r}")
        if self.futures_quoting not in ("rate", "price"):
            raise PanelError(f"unknown futures quoting {self.futures_quoting!r}")


@dataclass
class ObservationPanel:
    """Dated quote matrix with contract metadata and overnight fixings.

    ``values[i, j]`` is the decimal rate quote of column ``j`` on
    ``dates[i]``; NaN is the internal missing marker.  ``sofr_fixings`` and
    ``effr_fixings`` map business days (which may predate the first panel
    date) to overnight fixings, covering every accrual day needed by the
    in-accrual futures columns.
    """

    dates: list[dt.date]
    columns: list[PanelColumn]
    values: np.ndarray
    sofr_fixings: dict[dt.date, float] = field(default_factory=dict)
    effr_fixings: dict[dt.date, float] = field(default_factory=dict)
    holidays: frozenset[dt.date] = field(default_factory=frozenset)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.dates), len(self.columns)):
            raise PanelError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.dates)} dates x {len(self.columns)} columns"
            )
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur <= prev:
                raise PanelError(f"dates not strictly increasing at {cur}")

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def column_index(self, label: str) -> int:
        for j, col in enumerate(self.columns):
            if col.label == label:
                return j
        raise KeyError(label)

    def mask(self) -> np.ndarray:
        """Boolean matrix, True where a quote is present."""
        return ~np.isnan(self.values)

    def realized_window(
        self, kind: str, start: dt.date, valuation: dt.date
    ) -> tuple[np.ndarray, np.ndarray]:
        """Fixings and weights for accrual days in [start, valuation).

        ``kind`` selects the fixing series ("sofr" or "effr").  Raises
        :class:`PanelError` when a needed fixing is absent.
        """
        series = self.sofr_fixings if kind == "sofr" else self.effr_fixings
        days = business_days(start, valuation, self.holidays)
        values = np.empty(len(days))
        for i, d in enumerate(days):
            try:
                values[i] = series[d]
            except KeyError:
                raise PanelError(f"missing {kind} fixing for {d}") from None
        weights = np.array(day_count_weights(days, self.holidays))
        return values, weights


def _fixings_path(path: Path) -> Path:
    return path.with_name(path.stem + "_fixings.csv")


def save_panel(panel: ObservationPanel, path: str | Path,
               schema: PanelSchema = PanelSchema()) -> None:
    path = Path(path)
    scale = 100.0 if schema.unit == "percent" else 1.0
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + [c.label for c in panel.columns])
        for i, d in enumerate(panel.dates):
            row: list[str] = [d.isoformat()]
            for j, col in enumerate(panel.columns):
                v = panel.values[i, j]
                if math.isnan(v):
                    row.append("")
                elif schema.futures_quoting == "price" and col.is_futures:
                    row.append(repr(float(100.0 * (1.0 - v))))
                else:
                    row.append(repr(float(scale * v)))
            writer.writerow(row)
    if panel.sofr_fixings or panel.effr_fixings:
        days = sorted(set(panel.sofr_fixings) | set(panel.effr_fixings))
        with _fixings_path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "sofr", "effr"])
            for d in days:
                writer.writerow([
                    d.isoformat(),
                    repr(float(scale * panel.sofr_fixings[d])) if d in panel.sofr_fixings else "",
                    repr(float(scale * panel.effr_fixings[d])) if d in panel.effr_fixings else "",
                ])


def load_panel(path: str | Path, schema: PanelSchema = PanelSchema(),
               holidays: frozenset[dt.date] = frozenset()) -> ObservationPanel:
    """Parse a panel CSV (and its fixings companion when present).

    Every malformed input raises :class:`PanelError` with the offending
    row/column; a partially parsed panel is never returned.
    """
    path = Path(path)
    scale = 100.0 if schema.unit == "percent" else 1.0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        if not header or header[0].strip() != "date":
            raise PanelError(f"{path}: first header field must be 'date'")
        columns = []
        for j, token in enumerate(header[1:], start=1):
            try:
                columns.append(parse_column(token.strip(), holidays))
            except PanelError as exc:
                raise PanelError(f"{path}: header column {j}: {exc}") from None
        dates: list[dt.date] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns) + 1:
                raise PanelError(
                    f"{path}:{lineno}: expected {len(columns) + 1} fields, got {len(row)}"
                )
            try:
                d = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise PanelError(f"{path}:{lineno}: bad date {row[0]!r}") from None
            if dates and d <= dates[-1]:
                raise PanelError(f"{path}:{lineno}: dates not strictly increasing")
            dates.append(d)
            parsed = []
            for j, cell in enumerate(row[1:], start=1):
                cell = cell.strip()
                if not cell:
                    parsed.append(math.nan)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise PanelError(
                        f"{path}:{lineno}: column {j} ({columns[j - 1].label}): "
                        f"bad number {cell!r}"
                    ) from None
                if schema.futures_quoting == "price" and columns[j - 1].is_futures:
                    parsed.append((100.0 - value) / 100.0)
                else:
                    parsed.append(value / scale)
            rows.append(parsed)
    sofr: dict[dt.date, float] = {}
    effr: dict[dt.date, float] = {}
    fpath = _fixings_path(path)
    if fpath.exists():
        with fpath.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["date", "sofr", "effr"]:
                raise PanelError(f"{fpath}: expected header date,sofr,effr")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    d = dt.date.fromisoformat(row[0].strip())
                    if row[1].strip():
                        sofr[d] = float(row[1]) / scale
                    if row[2].strip():
                        effr[d] = float(row[2]) / scale
                except (ValueError, IndexError):
                    raise PanelError(f"{fpath}:{lineno}: malformed fixing row") from None
    return ObservationPanel(
        dates=dates,
        columns=columns,
        values=np.array(rows, dtype=float) if rows else np.empty((0, len(columns))),
        sofr_fixings=sofr,
        effr_fixings=effr,
        holidays=holidays,
    )
