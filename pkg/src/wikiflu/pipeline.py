"""File-to-file pipeline stages shared by the CLI subcommands and ``run-all``.

Every stage reads documented CSV/JSON artifacts and writes new ones whose
first line carries the tool version and a configuration digest.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import evaluate, featureset, healthdata, ingest, linkgraph, regress
from .config import RunConfig, stamp

logger = logging.getLogger(__name__)

CACHE_ENV = "WIKIFLU_CACHE_DIR"


class DataError(RuntimeError):
    """Input data missing or inconsistent."""


def digest_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def stage_ingest(
    out: Path,
    pageviews: Sequence[str] = (),
    pagecounts: Sequence[str] = (),
    project: str | None = None,
    pages: Sequence[str] | None = None,
    cutover: tuple[int, int] = ingest.DEFAULT_CUTOVER,
    strict: bool = False,
    jobs: int = 1,
    digest: str = "",
) -> ingest.ParseStats:
    stats = ingest.ParseStats()
    pc, st = ingest.ingest_files(pagecounts, project, pages, ingest.PAGECOUNTS, strict, jobs) if pagecounts else ({}, None)
    if st:
        stats.update(st)
    pv, st = ingest.ingest_files(pageviews, project, pages, ingest.PAGEVIEWS, strict, jobs) if pageviews else ({}, None)
    if st:
        stats.update(st)
    merged = ingest.merge_datasets(pc, pv, cutover) if pc else pv
    ingest.write_weekly_csv(merged, out, stamp(digest))
    return stats


def _cache_path(graph_path: Path, params: dict) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    h = hashlib.sha256(graph_path.read_bytes())
    h.update(json.dumps(params, sort_keys=True).encode())
    return Path(root) / f"ranking-{h.hexdigest()[:16]}.csv"


def stage_rank(
    graph_path: Path,
    method: str,
    reference: str,
    out_ranking: Path,
    out_features: Path | None = None,
    top_n: int = 100,
    k: int = linkgraph.DEFAULT_K,
    sigma: str = "inverse",
    max_k: int = linkgraph.MAX_K,
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 200,
    exclude_reference: bool = False,
    language: str = "",
    digest: str = "",
) -> featureset.FeatureList:
    params = {"method": method, "reference": reference}
    if method == "cyclerank":
        params.update(K=k, sigma=sigma)
    elif method == "ppagerank":
        params.update(damping=damping, tol=tol, max_iter=max_iter)
    else:
        raise ValueError(f"cannot rank with method {method!r}")

    cached = _cache_path(Path(graph_path), params)
    if cached is not None and cached.exists():
        body = [ln for ln in cached.read_text(encoding="utf-8").splitlines(True) if not ln.startswith("# wikiflu")]
        Path(out_ranking).write_text(f"# {stamp(digest)}\n" + "".join(body), encoding="utf-8")
        ranked = linkgraph.read_ranking_csv(out_ranking)
    else:
        graph, _ = linkgraph.load_edge_list(graph_path, strict=False)
        if reference not in graph:
            raise DataError(f"reference page {reference!r} not in graph {graph_path}")
        if method == "cyclerank":
            result = linkgraph.cyclerank(graph, reference, k, sigma, max_k)
        else:
            result = linkgraph.ppagerank(graph, [reference], damping, tol, max_iter)
        result.to_csv(out_ranking, stamp(digest))
        ranked = result.ranked()
        if cached is not None:
            cached.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(out_ranking, cached)

    skip = {linkgraph.normalize_title(reference)} if exclude_reference else set()
    titles = [t for t, s in ranked if s > 0 and t not in skip][:top_n]
    if not titles:
        raise DataError(f"{method} ranking from {reference!r} selected no pages")
    fl = featureset.FeatureList(method, language, titles)
    if out_features is not None:
        featureset.write_feature_list(fl, out_features, stamp(digest))
    return fl


def usable_seasons(series: dict, seasons: Sequence[healthdata.SeasonWindow]) -> list[healthdata.SeasonWindow]:
    """Seasons with at least one observed page-week."""
    observed = set()
    for s in series.values():
        observed.update(s.counts)
    return [s for s in seasons if any(w in observed for w in s.weeks)]


def select_dataset(series: dict, dataset: str) -> dict:
    if dataset == "PV":
        return ingest.restrict_provenance(series, ingest.PAGEVIEWS)
    if dataset == "PC+PV":
        return series
    raise ValueError(f"unknown dataset {dataset!r}")


def stage_build_matrix(
    weekly: Path,
    features: featureset.FeatureList | Path,
    incidence: Path,
    seasons: Sequence[str],
    out_matrix: Path,
    out_scaler: Path | None = None,
    dataset: str = "PC+PV",
    country: str | None = None,
    include_week53: bool = False,
    digest: str = "",
) -> healthdata.AlignedDataset:
    """Write the aligned raw matrix (page counts, week bits, target, season).

    Page columns are forward-filled but not standardized; the scaler
    sidecar holds statistics over all rows for inference or global mode.
    Seasons without any pageview data in ``dataset`` are dropped.
    """
    series = select_dataset(ingest.read_weekly_csv(weekly), dataset)
    fl = features if isinstance(features, featureset.FeatureList) else featureset.read_feature_list(features)
    inc = healthdata.load_incidence_csv(incidence, country)
    windows = [healthdata.season_window(s, include_week53) for s in seasons]
    kept = usable_seasons(series, windows)
    dropped = [s.label for s in windows if s not in kept]
    if dropped:
        logger.warning("dataset %s: no pageview data for seasons %s; dropped", dataset, ", ".join(dropped))
    windows = kept
    if len(windows) < 2:
        raise DataError(f"dataset {dataset}: fewer than two seasons have pageview data")
    rows = [w for s in windows for w in s.weeks]
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        fm = featureset.build_matrix(fl, series, rows, standardize_pages=False)
    for note in fm.warnings:
        logger.warning(note)
    try:
        aligned = healthdata.align(inc, fm, windows)
    except KeyError as exc:
        raise DataError(str(exc.args[0])) from None
    featureset.write_matrix_csv(
        out_matrix, aligned.rows, aligned.columns, aligned.X, aligned.y, aligned.groups, stamp(digest)
    )
    if out_scaler is not None:
        scaler = featureset.PageviewScaler(n_page_columns=fm.n_pages).fit(aligned.X)
        featureset.write_scaler_json(
            scaler, fm.page_columns, out_scaler,
            {"tool": stamp(digest), "fit_rows": "all", "week53_seasons": [s.label for s in windows if s.has_week53]},
        )
    return aligned


def stage_train(
    matrix: Path,
    lasso: regress.LassoConfig,
    out_models: Path,
    out_predictions: Path,
    held_out: Sequence[str] | None = None,
    standardization: str = "train",
    model_label: str = "",
    dataset_label: str = "",
    digest: str = "",
) -> regress.LosoResult:
    mf = featureset.read_matrix_csv(matrix)
    if mf.targets is None or mf.groups is None:
        raise DataError(f"{matrix}: needs 'season' and 'target' columns")
    present = list(dict.fromkeys(mf.groups.tolist()))
    held = [s for s in (held_out or present) if s in present]
    if not held:
        raise DataError(f"none of the requested held-out seasons are in {matrix}")
    targets = regress.AuditedTargets(mf.targets)
    result = regress.loso_protocol(
        mf.values, targets, mf.groups, lasso,
        columns=mf.columns, rows=mf.rows, held_out=held,
        n_page_columns=mf.n_pages, standardization=standardization, config_hash=digest,
    )
    if len(targets.reads) != len(result.fits):
        raise RuntimeError("target reads do not line up with the trained seasons")
    # held-out rows seen by each season's training run; must all be 0
    leaks = {f.season: len(r & set(f.test_rows.tolist())) for r, f in zip(targets.reads, result.fits)}
    if any(leaks.values()):
        raise RuntimeError(f"held-out targets were read during training: {leaks}")
    regress.save_models(
        result.models(), out_models,
        {"tool": stamp(digest), "optimizer": lasso.optimizer, "standardization": standardization,
         "protocol": "leave-one-season-out; training uses all other seasons, including later ones",
         "heldout_target_reads": leaks,
         "lasso": lasso.__dict__},
    )
    rows = []
    for fit in result.fits:
        for i, raw, clamped in zip(fit.test_rows, fit.prediction.raw, fit.prediction.clamped):
            y, w = mf.rows[i]
            rows.append([y, w, fit.season, repr(float(mf.targets[i])), repr(float(clamped)), repr(float(raw)),
                         model_label, dataset_label])
    evaluate.write_predictions_csv(rows, out_predictions, stamp(digest))
    return result


def stage_evaluate(
    predictions: Path,
    out_json: Path,
    out_csv: Path | None = None,
    country: str = "",
    digest: str = "",
) -> evaluate.EvaluationReport:
    records = evaluate.read_predictions_csv(predictions)
    if not records:
        raise DataError(f"{predictions}: no predictions")
    report = evaluate.evaluate_predictions(records, records[0]["model"], records[0]["dataset"], country)
    evaluate.write_report_json(report, out_json, {"tool": stamp(digest)})
    if out_csv is not None:
        evaluate.write_scores_csv(report, out_csv, stamp(digest))
    return report


def stage_analyze_features(
    models: Path,
    matrix: Path,
    out_predictors: Path,
    out_selection: Path,
    graph: Path | None = None,
    reference: str | None = None,
    k: int = 5,
    digest: str = "",
) -> tuple[evaluate.PredictorReport, evaluate.SelectionStats]:
    ms = regress.load_models(models)
    mf = featureset.read_matrix_csv(matrix)
    pages = {c: mf.values[:, j] for j, c in enumerate(mf.columns) if not featureset.is_week_column(c)}
    g = linkgraph.load_edge_list(graph, strict=False)[0] if graph else None
    report = evaluate.top_k_predictors(ms, pages, mf.targets, g, reference, k)
    report.to_csv(out_predictors, stamp(digest))
    sel = evaluate.selected_features(ms)
    _write_json(out_selection, {
        "meta": {"tool": stamp(digest)},
        "counts": {m.season: c for m, c in zip(ms, sel.counts)},
        "min": sel.minimum, "max": sel.maximum, "mean": sel.mean,
        "formatted": sel.formatted(),
        "union": sel.union,
        "notes": report.notes,
    })
    return report, sel


@dataclass
class CellResult:
    country: str
    method: str
    dataset: str
    ok: bool
    mean_pcc: float | None = None
    peak_cell: str | None = None
    selection: str | None = None
    features: list[str] = field(default_factory=list)
    union: list[str] = field(default_factory=list)
    error: str | None = None


def run_cell(cfg: RunConfig, method: str, dataset: str, out_root: Path) -> CellResult:
    """Run one method x dataset cell through every stage."""
    digest = cfg.digest()
    d = out_root / cfg.country / method / dataset.replace("+", "_")
    d.mkdir(parents=True, exist_ok=True)
    try:
        if method == "categories":
            fl = featureset.read_feature_list(cfg.resolve(cfg.paths.categories), "categories", cfg.language)
            featureset.write_feature_list(fl, d / "features.txt", stamp(digest))
        else:
            r = cfg.ranking
            fl = stage_rank(
                cfg.resolve(cfg.paths.graph), method, r.reference, d / "ranking.csv", d / "features.txt",
                r.top_n, r.cyclerank_k, r.cyclerank_sigma, r.max_k, r.damping, r.tol, r.max_iter,
                r.exclude_reference, cfg.language, digest,
            )
        stage_build_matrix(
            cfg.resolve(cfg.paths.weekly), fl, cfg.resolve(cfg.paths.incidence), cfg.seasons,
            d / "matrix.csv", d / "scaler.json", dataset, cfg.country or None, cfg.include_week53, digest,
        )
        stage_train(
            d / "matrix.csv", cfg.lasso, d / "models.json", d / "predictions.csv",
            cfg.evaluate_seasons, cfg.standardization, method, dataset, digest,
        )
        report = stage_evaluate(d / "predictions.csv", d / "report.json", d / "scores.csv", cfg.country, digest)
        graph = cfg.resolve(cfg.paths.graph) if cfg.paths.graph else None
        _, sel = stage_analyze_features(
            d / "models.json", d / "matrix.csv", d / "predictors.csv", d / "selection.json",
            graph, cfg.ranking.reference, cfg.top_k, digest,
        )
        return CellResult(cfg.country, method, dataset, True, report.mean_pcc, report.peak_cell,
                          sel.formatted(), fl.titles, sel.union)
    except Exception as exc:  # isolate per-cell failures
        logger.error("cell %s/%s/%s failed: %s", cfg.country, method, dataset, exc)
        return CellResult(cfg.country, method, dataset, False, error=f"{type(exc).__name__}: {exc}")


def _run_cell_args(args):
    return run_cell(*args)


def run_all(configs: Sequence[RunConfig], out_root: Path, jobs: int = 1) -> list[CellResult]:
    """Run every country x method x dataset cell and write combined tables."""
    out_root.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, m, ds, out_root) for cfg in configs for m in cfg.methods for ds in cfg.datasets]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_args, tasks))
    else:
        results = [_run_cell_args(t) for t in tasks]
    write_combined(configs, results, out_root)
    return results


def write_combined(configs: Sequence[RunConfig], results: Sequence[CellResult], out_root: Path) -> None:
    digest = digest_of(sorted(c.digest() for c in configs))
    countries = list(dict.fromkeys(c.country for c in configs))
    methods = list(dict.fromkeys(m for c in configs for m in c.methods))
    datasets = list(dict.fromkeys(d for c in configs for d in c.datasets))
    pcc = {(r.country, r.method, r.dataset): f"{r.mean_pcc:.3f}" if r.ok else "ERR" for r in results}
    peaks = {(r.country, r.method, r.dataset): r.peak_cell if r.ok else "ERR" for r in results}
    sizes = {(r.country, r.method, r.dataset): r.selection if r.ok else "ERR" for r in results}
    head = f"# {stamp(digest)}\n"
    (out_root / "table_mean_pcc.txt").write_text(head + evaluate.format_table(pcc, countries, methods, datasets))
    (out_root / "table_peaks.txt").write_text(
        head + "# exact (within +/-2 weeks)\n" + evaluate.format_table(peaks, countries, methods, datasets)
    )
    (out_root / "table_feature_counts.txt").write_text(
        head + "# min / max / mean selected pages\n" + evaluate.format_table(sizes, countries, methods, datasets)
    )

    overlap_lists = {}
    overlap_models = {}
    for r in results:
        if r.ok:
            overlap_lists.setdefault(r.country, {}).setdefault(r.method, r.features)
            if r.union:
                overlap_models[(r.country, r.method, r.dataset)] = r.union
    overlaps = {
        c: {a: {b: evaluate.feature_overlap(fa, fb) for b, fb in lists.items()} for a, fa in lists.items()}
        for c, lists in overlap_lists.items()
    }
    keys = sorted(overlap_models)
    model_overlap = {
        "/".join(a): {"/".join(b): evaluate.feature_overlap(overlap_models[a], overlap_models[b]) for b in keys}
        for a in keys
    }
    _write_json(out_root / "report.json", {
        "meta": {"tool": stamp(digest), "configs": [c.digest() for c in configs]},
        "cells": [r.__dict__ for r in results],
        "feature_list_overlap_pct": overlaps,
        "selected_feature_overlap_pct": model_overlap,
    })
