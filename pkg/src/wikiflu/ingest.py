"""Hourly Wikimedia dump parsing and weekly aggregation.

Both dump generations share the four-column line layout
``project title requests bytes``. Hourly files carry a UTC stamp
``YYYYMMDD-HHMMSS`` in their name, which fixes the ISO week every line
of the file is credited to.
"""

from __future__ import annotations

import csv
import gzip
import logging
import re
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import unquote

logger = logging.getLogger(__name__)

PAGECOUNTS = "pagecounts"
PAGEVIEWS = "pageviews"
DIALECTS = (PAGECOUNTS, PAGEVIEWS)
DEFAULT_CUTOVER = (2016, 36)

Week = tuple[int, int]

_STAMP = re.compile(r"(\d{8})-(\d{6})")


class DumpFormatError(ValueError):
    def __init__(self, position: str, reason: str):
        super().__init__(f"{position}: {reason}")
        self.position = position


@dataclass(frozen=True)
class DumpRecord:
    project: str
    title: str
    requests: int
    bytes: int


@dataclass
class ParseStats:
    accepted: int = 0
    accepted_requests: int = 0
    filtered: int = 0
    malformed: int = 0
    malformed_positions: list[str] = field(default_factory=list)

    def update(self, other: "ParseStats") -> None:
        self.accepted += other.accepted
        self.accepted_requests += other.accepted_requests
        self.filtered += other.filtered
        self.malformed += other.malformed
        self.malformed_positions.extend(other.malformed_positions)


@dataclass
class WeeklySeries:
    """Weekly totals for one page, keyed by ``(iso_year, iso_week)``."""

    page: str
    counts: dict[Week, float] = field(default_factory=dict)
    provenance: dict[Week, str] = field(default_factory=dict)

    def weeks(self) -> list[Week]:
        return sorted(self.counts)

    def total(self) -> float:
        return sum(self.counts.values())


def _project_of(code: str, dialect: str) -> str:
    # pageviews splits desktop ("it") and mobile-web ("it.m"); both are kept
    if dialect == PAGEVIEWS and code.endswith(".m"):
        return code[:-2]
    return code


def parse_dump_line(
    line: str,
    dialect: str = PAGEVIEWS,
    project: str | None = None,
    *,
    position: str = "?",
    strict: bool = False,
    stats: ParseStats | None = None,
) -> DumpRecord | None:
    """Parse one dump line.

    Returns ``None`` for lines that are filtered out by ``project`` or
    that are malformed in lenient mode; both outcomes are tallied in
    ``stats`` when given. Titles are percent-decoded and spaces turned into
    underscores.
    """
    if dialect not in DIALECTS:
        raise ValueError(f"unknown dialect {dialect!r}")
    parts = line.strip().split(" ")
    reason = None
    if len(parts) != 4:
        reason = f"expected 4 space-separated fields, got {len(parts)}"
    elif not parts[2].isdigit() or not parts[3].isdigit():
        reason = "non-numeric request or byte count"
    elif not parts[1]:
        reason = "empty title"
    if reason is not None:
        if strict:
            raise DumpFormatError(position, reason)
        if stats is not None:
            stats.malformed += 1
            if len(stats.malformed_positions) < 1000:
                stats.malformed_positions.append(position)
        return None

    proj = _project_of(parts[0], dialect)
    if project is not None and proj != project:
        if stats is not None:
            stats.filtered += 1
        return None
    title = unquote(parts[1]).replace(" ", "_")
    rec = DumpRecord(proj, title, int(parts[2]), int(parts[3]))
    if stats is not None:
        stats.accepted += 1
        stats.accepted_requests += rec.requests
    return rec


def timestamp_from_name(path: str | Path) -> datetime:
    m = _STAMP.search(Path(path).name)
    if m is None:
        raise DumpFormatError(str(path), "file name lacks a YYYYMMDD-HHMMSS timestamp")
    try:
        return datetime.strptime("".join(m.groups()), "%Y%m%d%H%M%S").replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise DumpFormatError(str(path), f"bad timestamp: {exc}") from None


def dialect_from_name(path: str | Path) -> str:
    name = Path(path).name
    for d in DIALECTS:
        if name.startswith(d):
            return d
    raise DumpFormatError(str(path), "cannot infer dialect; name must start with pagecounts or pageviews")


def _open(path: str | Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, encoding="utf-8", errors="replace")


def read_dump_file(
    path: str | Path,
    dialect: str | None = None,
    project: str | None = None,
    strict: bool = False,
    stats: ParseStats | None = None,
) -> Iterator[tuple[datetime, DumpRecord]]:
    stamp = timestamp_from_name(path)
    dialect = dialect or dialect_from_name(path)
    with _open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_dump_line(
                line, dialect, project, position=f"{path}:{lineno}", strict=strict, stats=stats
            )
            if rec is not None:
                yield stamp, rec


def aggregate_weekly(
    records: Iterable[tuple[datetime, DumpRecord]],
    project: str | None = None,
    pages: Iterable[str] | None = None,
    provenance: str = PAGEVIEWS,
) -> dict[str, WeeklySeries]:
    """Sum requests per page and ISO week of the record timestamp."""
    wanted = None if pages is None else {p.replace(" ", "_") for p in pages}
    totals: dict[str, dict[Week, int]] = defaultdict(lambda: defaultdict(int))
    for stamp, rec in records:
        if project is not None and rec.project != project:
            continue
        if wanted is not None and rec.title not in wanted:
            continue
        iso = stamp.isocalendar()
        totals[rec.title][(iso[0], iso[1])] += rec.requests
    return {
        page: WeeklySeries(
            page,
            {w: c for w, c in sorted(weeks.items())},
            {w: provenance for w in sorted(weeks)},
        )
        for page, weeks in sorted(totals.items())
    }


def _ingest_one(args) -> tuple[dict[str, dict[Week, int]], ParseStats]:
    path, dialect, project, pages, strict = args
    stats = ParseStats()
    series = aggregate_weekly(read_dump_file(path, dialect, project, strict, stats), project, pages)
    return {p: dict(s.counts) for p, s in series.items()}, stats


def ingest_files(
    paths: Iterable[str | Path],
    project: str | None = None,
    pages: Iterable[str] | None = None,
    dialect: str | None = None,
    strict: bool = False,
    jobs: int = 1,
) -> tuple[dict[str, WeeklySeries], ParseStats]:
    """Aggregate many hourly dump files of one dialect into weekly series.

    Files may be processed in parallel; per-page totals are integer sums
    merged in file order, so the result does not depend on scheduling.
    """
    paths = sorted(str(p) for p in paths)
    dialects = {dialect or dialect_from_name(p) for p in paths}
    if len(dialects) > 1:
        raise ValueError(f"mixed dialects in one ingest call: {sorted(dialects)}")
    the_dialect = dialects.pop() if dialects else (dialect or PAGEVIEWS)
    page_list = None if pages is None else sorted(pages)
    tasks = [(p, the_dialect, project, page_list, strict) for p in paths]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_ingest_one, tasks))
    else:
        parts = [_ingest_one(t) for t in tasks]

    stats = ParseStats()
    totals: dict[str, dict[Week, int]] = defaultdict(lambda: defaultdict(int))
    for counts, st in parts:
        stats.update(st)
        for page, weeks in counts.items():
            for w, c in weeks.items():
                totals[page][w] += c
    series = {
        page: WeeklySeries(page, dict(sorted(w.items())), {k: the_dialect for k in sorted(w)})
        for page, w in sorted(totals.items())
    }
    if stats.malformed:
        logger.warning("%d malformed dump lines skipped", stats.malformed)
    return series, stats


def merge_datasets(
    pc: dict[str, WeeklySeries],
    pv: dict[str, WeeklySeries],
    cutover: Week = DEFAULT_CUTOVER,
) -> dict[str, WeeklySeries]:
    """Weeks before ``cutover`` come from ``pc``, the rest from ``pv``."""
    merged: dict[str, WeeklySeries] = {}
    for page in sorted(set(pc) | set(pv)):
        out = WeeklySeries(page)
        if page in pc:
            for w in pc[page].weeks():
                if w < cutover:
                    out.counts[w] = pc[page].counts[w]
                    out.provenance[w] = pc[page].provenance.get(w, PAGECOUNTS)
        if page in pv:
            for w in pv[page].weeks():
                if w >= cutover:
                    out.counts[w] = pv[page].counts[w]
                    out.provenance[w] = pv[page].provenance.get(w, PAGEVIEWS)
        out.counts = dict(sorted(out.counts.items()))
        out.provenance = dict(sorted(out.provenance.items()))
        if out.counts:
            merged[page] = out
    return merged


def restrict_provenance(series: dict[str, WeeklySeries], keep: str) -> dict[str, WeeklySeries]:
    """Drop every point whose provenance differs from ``keep``."""
    out = {}
    for page, s in series.items():
        weeks = [w for w in s.weeks() if s.provenance.get(w) == keep]
        if weeks:
            out[page] = WeeklySeries(page, {w: s.counts[w] for w in weeks}, {w: keep for w in weeks})
    return out


def _fmt_count(c: float) -> str:
    return str(int(c)) if float(c).is_integer() else repr(float(c))


def write_weekly_csv(series: dict[str, WeeklySeries], path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["page", "iso_year", "iso_week", "count", "provenance"])
        for page in sorted(series):
            s = series[page]
            for w in s.weeks():
                writer.writerow([page, w[0], w[1], _fmt_count(s.counts[w]), s.provenance.get(w, "")])


def read_weekly_csv(path: str | Path) -> dict[str, WeeklySeries]:
    out: dict[str, WeeklySeries] = {}
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for i, row in enumerate(reader, start=2):
            try:
                week = (int(row["iso_year"]), int(row["iso_week"]))
                count = float(row["count"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DumpFormatError(f"{path}:{i}", f"bad weekly row ({exc})") from None
            if not 1 <= week[1] <= 53 or count < 0:
                raise DumpFormatError(f"{path}:{i}", "week outside [1, 53] or negative count")
            s = out.setdefault(row["page"], WeeklySeries(row["page"]))
            s.counts[week] = int(count) if count.is_integer() else count
            s.provenance[week] = row.get("provenance") or PAGEVIEWS
    for s in out.values():
        s.counts = dict(sorted(s.counts.items()))
        s.provenance = dict(sorted(s.provenance.items()))
    return out
