"""Design-matrix construction from weekly pageview series.

Page columns are forward-filled, then standardized with statistics fitted
on a chosen subset of rows; 52 one-hot week-of-year columns follow them.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

Week = tuple[int, int]
N_WEEK_BITS = 52
METHODS = ("categories", "cyclerank", "ppagerank")


def week_columns() -> list[str]:
    return [f"week_{i:02d}" for i in range(1, N_WEEK_BITS + 1)]


def is_week_column(name: str) -> bool:
    return name.startswith("week_") and name[5:].isdigit()


@dataclass
class FeatureList:
    method: str
    language: str
    titles: list[str]

    def __post_init__(self):
        if not self.titles:
            raise ValueError("feature list is empty")
        if len(set(self.titles)) != len(self.titles):
            seen, dup = set(), []
            for t in self.titles:
                if t in seen:
                    dup.append(t)
                seen.add(t)
            raise ValueError(f"duplicate titles in feature list: {dup[:5]}")


def read_feature_list(path: str | Path, method: str = "categories", language: str = "") -> FeatureList:
    """One title per line; ``#`` comments and blank lines ignored.

    Ranking CSVs (``rank,title,score``) are accepted too.
    """
    titles: list[str] = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if lines and lines[0] == "rank,title,score":
        titles = [row["title"] for row in csv.DictReader(lines)]
    else:
        titles = [ln.strip().replace(" ", "_") for ln in lines]
    # duplicates are collapsed keeping first occurrence
    return FeatureList(method, language, list(dict.fromkeys(titles)))


def write_feature_list(fl: FeatureList, path: str | Path, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(f"# method={fl.method} language={fl.language}\n")
        for t in fl.titles:
            fh.write(t + "\n")


def forward_fill(counts: Mapping[Week, float], axis: Sequence[Week]) -> np.ndarray:
    """Values of ``counts`` on ``axis`` with gaps padded.

    Weeks before the first observation are 0 (page not created yet); any
    later gap repeats the most recent observation, including observations
    that fall between axis weeks.
    """
    observed = sorted(counts)
    out = np.zeros(len(axis))
    for i, w in enumerate(axis):
        j = bisect.bisect_right(observed, w)
        if j:
            out[i] = counts[observed[j - 1]]
    return out


def standardize(column, fit_rows=None) -> tuple[np.ndarray, float, float]:
    """Z-score ``column`` with mean and population std taken from ``fit_rows``.

    A constant fit subset (std 0) maps the whole column to zeros.
    """
    x = np.asarray(column, dtype=float)
    ref = x if fit_rows is None else x[np.asarray(fit_rows, dtype=int)]
    if ref.size == 0:
        raise ValueError("fit_rows is empty")
    mu = float(ref.mean())
    sd = float(ref.std())
    if sd == 0.0:
        return np.zeros_like(x), mu, 0.0
    return (x - mu) / sd, mu, sd


def one_hot_week(week: int) -> np.ndarray:
    """52-bit week-of-year indicator; ISO week 53 shares week 52's bit."""
    if not 1 <= week <= 53:
        raise ValueError(f"week must lie in [1, 53], got {week}")
    v = np.zeros(N_WEEK_BITS)
    v[min(week, N_WEEK_BITS) - 1] = 1.0
    return v


class PageviewScaler(TransformerMixin, BaseEstimator):
    """Standardize the leading page columns, pass week bits through.

    Parameters
    ----------
    n_page_columns : int or None, default=None
        Number of leading columns to standardize. ``None`` means all.

    Attributes
    ----------
    mean_ : ndarray of shape (n_page_columns,)
    scale_ : ndarray of shape (n_page_columns,)
        Population standard deviation; 0 for constant columns, which are
        mapped to zeros.
    """

    def __init__(self, n_page_columns: int | None = None):
        self.n_page_columns = n_page_columns

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        k = X.shape[1] if self.n_page_columns is None else self.n_page_columns
        if not 0 <= k <= X.shape[1]:
            raise ValueError(f"n_page_columns={k} exceeds {X.shape[1]} columns")
        self.n_features_in_ = X.shape[1]
        self.mean_ = X[:, :k].mean(axis=0)
        self.scale_ = X[:, :k].std(axis=0)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=float, copy=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        k = self.mean_.shape[0]
        safe = np.where(self.scale_ == 0.0, 1.0, self.scale_)
        X[:, :k] = np.where(self.scale_ == 0.0, 0.0, (X[:, :k] - self.mean_) / safe)
        return X

    def to_dict(self, titles: Sequence[str]) -> dict[str, dict[str, float]]:
        check_is_fitted(self, "mean_")
        return {t: {"mean": float(m), "std": float(s)} for t, m, s in zip(titles, self.mean_, self.scale_)}

    @classmethod
    def from_dict(cls, params: Mapping[str, Mapping[str, float]], n_features: int) -> "PageviewScaler":
        sc = cls(n_page_columns=len(params))
        sc.mean_ = np.array([p["mean"] for p in params.values()], dtype=float)
        sc.scale_ = np.array([p["std"] for p in params.values()], dtype=float)
        sc.n_features_in_ = n_features
        return sc


@dataclass
class FeatureMatrix:
    rows: list[Week]
    columns: list[str]
    values: np.ndarray
    n_pages: int
    scaler: PageviewScaler | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def page_columns(self) -> list[str]:
        return self.columns[: self.n_pages]

    @property
    def standardized(self) -> bool:
        return self.scaler is not None


def build_matrix(
    features: FeatureList,
    series: Mapping[str, object],
    rows: Sequence[Week],
    fit_rows: Iterable[int] | None = None,
    standardize_pages: bool = True,
) -> FeatureMatrix:
    """Assemble page columns (list order) followed by the 52 week bits.

    ``series`` maps title to a :class:`~wikiflu.ingest.WeeklySeries` or a
    plain ``{week: count}`` mapping. Titles without a series become zero
    columns and are recorded in ``FeatureMatrix.warnings``. With
    ``fit_rows=None`` the scaler is fitted on every row.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("row set is empty")
    notes: list[str] = []
    cols = []
    for title in features.titles:
        s = series.get(title)
        if s is None:
            notes.append(f"no pageview series for {title!r}; using a zero column")
            cols.append(np.zeros(len(rows)))
            continue
        counts = getattr(s, "counts", s)
        cols.append(forward_fill(counts, rows))
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    pages = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    weeks = np.vstack([one_hot_week(w) for _, w in rows])
    X = np.hstack([pages, weeks])
    scaler = None
    if standardize_pages:
        fit_idx = np.arange(len(rows)) if fit_rows is None else np.asarray(list(fit_rows), dtype=int)
        if fit_idx.size == 0:
            raise ValueError("fit_rows is empty")
        scaler = PageviewScaler(n_page_columns=len(features.titles)).fit(X[fit_idx])
        X = scaler.transform(X)
    return FeatureMatrix(rows, list(features.titles) + week_columns(), X, len(features.titles), scaler, notes)


def write_scaler_json(scaler: PageviewScaler, titles: Sequence[str], path: str | Path, meta: dict | None = None) -> None:
    doc = {"meta": dict(meta or {}, std_convention="population"), "scaler": scaler.to_dict(titles)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_scaler_json(path: str | Path, n_features: int) -> tuple[PageviewScaler, list[str]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    params = doc.get("scaler", doc)
    return PageviewScaler.from_dict(params, n_features), list(params)


def write_matrix_csv(
    path: str | Path,
    rows: Sequence[Week],
    columns: Sequence[str],
    values: np.ndarray,
    targets: Sequence[float] | None = None,
    groups: Sequence[str] | None = None,
    header_comment: str | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        head = ["iso_year", "iso_week"]
        if groups is not None:
            head.append("season")
        if targets is not None:
            head.append("target")
        writer.writerow(head + list(columns))
        for i, (y, w) in enumerate(rows):
            line: list[object] = [y, w]
            if groups is not None:
                line.append(groups[i])
            if targets is not None:
                line.append(repr(float(targets[i])))
            line.extend(repr(float(v)) for v in values[i])
            writer.writerow(line)


@dataclass
class MatrixFile:
    rows: list[Week]
    columns: list[str]
    values: np.ndarray
    targets: np.ndarray | None
    groups: np.ndarray | None

    @property
    def n_pages(self) -> int:
        return sum(not is_week_column(c) for c in self.columns)


def read_matrix_csv(path: str | Path) -> MatrixFile:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        head = next(reader)
        data = list(reader)
    fixed = [c for c in ("iso_year", "iso_week", "season", "target") if c in head]
    off = len(fixed)
    rows = [(int(r[0]), int(r[1])) for r in data]
    groups = np.array([r[head.index("season")] for r in data]) if "season" in head else None
    targets = np.array([float(r[head.index("target")]) for r in data]) if "target" in head else None
    values = np.array([[float(v) for v in r[off:]] for r in data], dtype=float).reshape(len(data), len(head) - off)
    return MatrixFile(rows, head[off:], values, targets, groups)
