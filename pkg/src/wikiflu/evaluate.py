"""Season-level scores, summary tables and feature-selection analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .featureset import is_week_column
from .linkgraph import LinkGraph, distance_class, shortest_path_distance

Week = tuple[int, int]


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x[0]))


def pearson(a, b) -> float:
    """Sample Pearson correlation; 0.0 when either series is constant.

    Use :func:`pearson_defined` to tell a true zero from the constant case.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"series must be 1-d and of equal length, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError("need at least 2 points")
    if _is_constant(a) or _is_constant(b):
        return 0.0
    da = a - a.mean()
    db = b - b.mean()
    r = float(da @ db / math.sqrt(float(da @ da) * float(db @ db)))
    return max(-1.0, min(1.0, r))


def pearson_defined(a, b) -> bool:
    return not (_is_constant(np.asarray(a, dtype=float)) or _is_constant(np.asarray(b, dtype=float)))


@dataclass
class PeakResult:
    truth_index: int
    pred_index: int
    exact: bool
    within_2: bool


def peak_accuracy(truth, pred, tolerance: int = 2) -> PeakResult:
    """Compare argmax positions; ties resolve to the earliest week."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.size == 0 or pred.size == 0:
        raise ValueError("empty season")
    if truth.shape != pred.shape:
        raise ValueError("truth and prediction lengths differ")
    t = int(np.argmax(truth))
    p = int(np.argmax(pred))
    return PeakResult(t, p, t == p, abs(t - p) <= tolerance)


@dataclass
class SeasonScore:
    season: str
    pcc: float
    pcc_defined: bool
    peak_truth_week: Week
    peak_pred_week: Week
    peak_exact: bool
    peak_within_2: bool
    n_weeks: int

    def __post_init__(self):
        if self.peak_exact and not self.peak_within_2:
            raise ValueError("exact peak must also be within 2 weeks")


def score_season(season: str, weeks: Sequence[Week], truth, pred) -> SeasonScore:
    pk = peak_accuracy(truth, pred)
    return SeasonScore(
        season=season,
        pcc=pearson(truth, pred),
        pcc_defined=pearson_defined(truth, pred),
        peak_truth_week=tuple(weeks[pk.truth_index]),
        peak_pred_week=tuple(weeks[pk.pred_index]),
        peak_exact=pk.exact,
        peak_within_2=pk.within_2,
        n_weeks=len(weeks),
    )


@dataclass
class EvaluationReport:
    scores: list[SeasonScore]
    mean_pcc: float
    peaks_exact: int
    peaks_within_2: int
    model: str = ""
    dataset: str = ""
    country: str = ""

    @property
    def peak_cell(self) -> str:
        return f"{self.peaks_exact} ({self.peaks_within_2})"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["peak_cell"] = self.peak_cell
        return d


def summarize(scores: Sequence[SeasonScore], model: str = "", dataset: str = "", country: str = "") -> EvaluationReport:
    if not scores:
        raise ValueError("no season scores to summarize")
    return EvaluationReport(
        scores=list(scores),
        mean_pcc=float(sum(s.pcc for s in scores) / len(scores)),
        peaks_exact=sum(s.peak_exact for s in scores),
        peaks_within_2=sum(s.peak_within_2 for s in scores),
        model=model,
        dataset=dataset,
        country=country,
    )


def feature_overlap(a: Iterable[str], b: Iterable[str]) -> float:
    """Percentage of the items of ``a`` that also occur in ``b``.

    Not symmetric: ``feature_overlap(a, b)`` and ``feature_overlap(b, a)``
    have different denominators.
    """
    sa = set(getattr(a, "titles", a))
    sb = set(getattr(b, "titles", b))
    if not sa:
        raise ValueError("first feature set is empty")
    return 100.0 * len(sa & sb) / len(sa)


@dataclass
class SelectionStats:
    union: list[str]
    counts: list[int]
    minimum: int
    maximum: int
    mean: float

    def formatted(self) -> str:
        return f"{self.minimum} / {self.maximum} / {self.mean:.2f}"


def _support(model) -> list[str]:
    if hasattr(model, "nonzero_features"):
        return model.nonzero_features()
    return [c for c in model if not is_week_column(c)]


def selected_features(models: Sequence) -> SelectionStats:
    """Union of nonzero page features across models plus per-model counts.

    ``models`` holds :class:`~wikiflu.regress.TrainedModel` objects or
    plain collections of selected column names. Week-bit columns are
    ignored.
    """
    if not models:
        raise ValueError("need at least one model")
    supports = [_support(m) for m in models]
    counts = [len(s) for s in supports]
    union = sorted(set().union(*map(set, supports)))
    return SelectionStats(union, counts, min(counts), max(counts), sum(counts) / len(counts))


@dataclass
class PredictorRow:
    title: str
    mean_weight: float
    n_models_selected: int
    pcc: float
    distance: int | None
    distance_class: str


@dataclass
class PredictorReport:
    rows: list[PredictorRow]
    reference: str | None
    graph_available: bool = True
    notes: list[str] = field(default_factory=list)

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "title", "mean_weight", "models_selected", "pcc", "d_i"])
            for i, r in enumerate(self.rows, start=1):
                d = r.distance_class if self.graph_available else "NA"
                w.writerow([i, r.title, f"{r.mean_weight:.12g}", r.n_models_selected, f"{r.pcc:.6f}", d])


def top_k_predictors(
    models: Sequence,
    page_values: Mapping[str, np.ndarray],
    incidence,
    graph: LinkGraph | None = None,
    ref: str | None = None,
    k: int = 5,
    from_reference: bool = True,
) -> PredictorReport:
    """Rank page features by their mean weight over ``models``.

    Only features with a positive mean weight are listed. ``page_values``
    maps each title to its weekly values aligned with ``incidence``; their
    correlation with incidence is reported along with the hop distance
    from ``ref`` to the page (or page to ``ref`` if ``from_reference`` is
    false).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    sums: dict[str, float] = {}
    picked: dict[str, int] = {}
    for m in models:
        for c, w in zip(m.columns, m.weights):
            if is_week_column(c):
                continue
            sums[c] = sums.get(c, 0.0) + w
            picked[c] = picked.get(c, 0) + (w != 0.0)
    n = len(models)
    ranked = sorted(
        ((t, s / n) for t, s in sums.items() if s / n > 0), key=lambda ts: (-ts[1], ts[0])
    )[:k]

    notes = []
    usable = graph is not None and ref is not None and ref in graph
    if graph is not None and ref is not None and not usable:
        notes.append(f"reference page {ref!r} not in graph; D_I unavailable")
    rows = []
    inc = np.asarray(incidence, dtype=float)
    for title, mw in ranked:
        dist = None
        if usable and title in graph:
            a, b = (ref, title) if from_reference else (title, ref)
            dist = shortest_path_distance(graph, a, b)
        vals = page_values.get(title)
        pcc = pearson(vals, inc) if vals is not None else float("nan")
        rows.append(PredictorRow(title, mw, picked[title], pcc, dist, distance_class(dist)))
    return PredictorReport(rows, ref, usable, notes)


def write_report_json(report: EvaluationReport, path: str | Path, meta: dict | None = None) -> None:
    doc = {"meta": dict(meta or {}), "report": report.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def write_scores_csv(report: EvaluationReport, path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["season", "pcc", "pcc_defined", "peak_truth", "peak_pred", "peak_exact", "peak_within_2", "n_weeks"])
        for s in report.scores:
            w.writerow([
                s.season, f"{s.pcc:.6f}", int(s.pcc_defined),
                "%d-W%02d" % s.peak_truth_week, "%d-W%02d" % s.peak_pred_week,
                int(s.peak_exact), int(s.peak_within_2), s.n_weeks,
            ])
        w.writerow(["mean", f"{report.mean_pcc:.6f}", "", "", "", report.peaks_exact, report.peaks_within_2, ""])


PREDICTION_HEADER = ["iso_year", "iso_week", "season", "truth", "prediction", "raw_prediction", "model", "dataset"]


def write_predictions_csv(rows: Iterable[Sequence], path: str | Path, header_comment: str | None = None) -> None:
    """Per-week plot table; each row follows ``PREDICTION_HEADER``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for r in rows:
            w.writerow(r)


def read_predictions_csv(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def evaluate_predictions(records: Sequence[Mapping], model: str = "", dataset: str = "", country: str = "") -> EvaluationReport:
    """Score a prediction table (rows as read by :func:`read_predictions_csv`)."""
    by_season: dict[str, list[Mapping]] = {}
    for r in records:
        by_season.setdefault(r["season"], []).append(r)
    scores = []
    for season in sorted(by_season):
        rs = sorted(by_season[season], key=lambda r: (int(r["iso_year"]), int(r["iso_week"])))
        weeks = [(int(r["iso_year"]), int(r["iso_week"])) for r in rs]
        truth = [float(r["truth"]) for r in rs]
        pred = [float(r["prediction"]) for r in rs]
        scores.append(score_season(season, weeks, truth, pred))
    return summarize(scores, model, dataset, country)


def format_table(cells: Mapping[tuple[str, str, str], str], countries: Sequence[str],
                 methods: Sequence[str], datasets: Sequence[str]) -> str:
    """Country rows by method x dataset columns, as plain text."""
    head = ["country"] + [f"{m}/{d}" for m in methods for d in datasets]
    lines = [" | ".join(head)]
    for c in countries:
        lines.append(" | ".join([c] + [cells.get((c, m, d), "-") for m in methods for d in datasets]))
    return "\n".join(lines) + "\n"
