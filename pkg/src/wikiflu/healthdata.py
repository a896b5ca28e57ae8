"""ILI incidence series and influenza season windows.

The canonical incidence file is a CSV with header
``country,iso_year,iso_week,incidence`` (cases per 100,000, dot decimal).
National exports (InfluNet, RKI, WHO FluNet) need a one-off conversion to
this layout before loading.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

Week = tuple[int, int]

SEASON_START_WEEK = 42
SEASON_END_WEEK = 15

_LABEL = re.compile(r"^(\d{4})-(\d{4})$")


class IncidenceFormatError(ValueError):
    pass


@dataclass
class IncidenceSeries:
    country: str
    points: dict[Week, float] = field(default_factory=dict)

    def weeks(self) -> list[Week]:
        return sorted(self.points)

    def values(self, weeks: Sequence[Week]) -> np.ndarray:
        missing = [w for w in weeks if w not in self.points]
        if missing:
            raise KeyError(f"{self.country}: no incidence for weeks {missing[:5]}")
        return np.array([self.points[w] for w in weeks], dtype=float)


def iso_weeks_in_year(year: int) -> int:
    return date(year, 12, 28).isocalendar()[1]


@dataclass(frozen=True)
class SeasonWindow:
    """Weeks 42 of ``start_year`` through 15 of the following year.

    ``has_week53`` marks seasons whose starting ISO year has a week 53;
    ``weeks`` contains it only when the window was built with
    ``include_week53=True`` (then 27 weeks instead of 26).
    """

    label: str
    weeks: tuple[Week, ...]
    has_week53: bool = False

    @property
    def start_year(self) -> int:
        return self.weeks[0][0]

    @property
    def extended(self) -> bool:
        return len(self.weeks) > 26

    def __len__(self) -> int:
        return len(self.weeks)


def season_window(label: str, include_week53: bool = False) -> SeasonWindow:
    m = _LABEL.match(label.strip())
    if m is None:
        raise ValueError(f"season label must look like 'YYYY-YYYY', got {label!r}")
    y0, y1 = int(m.group(1)), int(m.group(2))
    if y1 != y0 + 1:
        raise ValueError(f"season label years must be consecutive, got {label!r}")
    has53 = iso_weeks_in_year(y0) == 53
    last = 53 if (has53 and include_week53) else 52
    weeks = [(y0, w) for w in range(SEASON_START_WEEK, last + 1)]
    weeks += [(y1, w) for w in range(1, SEASON_END_WEEK + 1)]
    return SeasonWindow(f"{y0}-{y1}", tuple(weeks), has53)


def season_of(week: Week) -> str | None:
    """Label of the season containing ``week``, or None off-season."""
    y, w = week
    if w >= SEASON_START_WEEK:
        return f"{y}-{y + 1}"
    if w <= SEASON_END_WEEK:
        return f"{y - 1}-{y}"
    return None


def seasons_between(first: str, last: str, include_week53: bool = False) -> list[SeasonWindow]:
    a, b = season_window(first).start_year, season_window(last).start_year
    return [season_window(f"{y}-{y + 1}", include_week53) for y in range(a, b + 1)]


def load_incidence_csv(path: str | Path, country: str | None = None) -> IncidenceSeries:
    """Load and validate the canonical incidence CSV.

    Rows for other countries are ignored when ``country`` is given; the
    file must otherwise hold a single country.
    """
    points: dict[Week, float] = {}
    seen_country = country
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        expected = {"country", "iso_year", "iso_week", "incidence"}
        if reader.fieldnames is None or not expected <= set(reader.fieldnames):
            raise IncidenceFormatError(f"{path}: header must contain {sorted(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if country is not None and row["country"] != country:
                continue
            if seen_country is None:
                seen_country = row["country"]
            elif row["country"] != seen_country:
                raise IncidenceFormatError(
                    f"{path}:{lineno}: several countries in file; pass country="
                )
            try:
                week = (int(row["iso_year"]), int(row["iso_week"]))
                value = float(row["incidence"])
            except (TypeError, ValueError):
                raise IncidenceFormatError(f"{path}:{lineno}: malformed row {row}") from None
            if not 1 <= week[1] <= 53:
                raise IncidenceFormatError(f"{path}:{lineno}: iso_week {week[1]} outside [1, 53]")
            if not math.isfinite(value) or value < 0:
                raise IncidenceFormatError(f"{path}:{lineno}: incidence must be >= 0, got {value}")
            if week in points:
                raise IncidenceFormatError(f"{path}:{lineno}: duplicate week {week[0]}-W{week[1]:02d}")
            points[week] = value
    return IncidenceSeries(seen_country or "", dict(sorted(points.items())))


def write_incidence_csv(series: IncidenceSeries, path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["country", "iso_year", "iso_week", "incidence"])
        for (y, w), v in sorted(series.points.items()):
            writer.writerow([series.country, y, w, repr(float(v))])


@dataclass
class AlignedDataset:
    """Design matrix rows paired with targets, one row per season week."""

    X: np.ndarray
    y: np.ndarray
    rows: list[Week]
    groups: np.ndarray
    columns: list[str]

    def season_rows(self, label: str) -> np.ndarray:
        return np.flatnonzero(self.groups == label)


def align(inc: IncidenceSeries, feats, seasons: Sequence[SeasonWindow]) -> AlignedDataset:
    """Select the feature rows of every season week and pair them with incidence.

    ``feats`` is a :class:`~wikiflu.featureset.FeatureMatrix` (anything with
    ``rows``, ``values`` and ``columns``).
    """
    row_of = {w: i for i, w in enumerate(feats.rows)}
    rows: list[Week] = []
    groups: list[str] = []
    for s in seasons:
        for w in s.weeks:
            if w not in inc.points:
                raise KeyError(f"{inc.country}: incidence missing for {w[0]}-W{w[1]:02d} (season {s.label})")
            if w not in row_of:
                raise KeyError(f"feature matrix has no row for {w[0]}-W{w[1]:02d} (season {s.label})")
            rows.append(w)
            groups.append(s.label)
    idx = [row_of[w] for w in rows]
    return AlignedDataset(
        X=np.asarray(feats.values)[idx],
        y=inc.values(rows),
        rows=rows,
        groups=np.array(groups),
        columns=list(feats.columns),
    )
