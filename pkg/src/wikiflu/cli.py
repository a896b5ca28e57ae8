"""Command-line entry point: ``wikiflu <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 at least one ``run-all`` grid cell failed. Set ``WIKIFLU_CACHE_DIR`` to
reuse graph rankings across runs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import tomli_w

from . import __version__, config, healthdata, ingest, linkgraph, pipeline, synth
from .config import ConfigError, stamp
from .featureset import METHODS
from .regress import LassoConfig

log = logging.getLogger("wikiflu")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3


def _week(text: str) -> tuple[int, int]:
    try:
        y, w = text.replace("W", "").split("-")
        return int(y), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-WW, got {text!r}") from None


def _lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def _lasso_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--optimizer", choices=["coordinate_descent", "proximal_sgd"], default="coordinate_descent")
    p.add_argument("--n-lambdas", type=int, default=50)
    p.add_argument("--lambda-ratio", type=float, default=1e-4)
    p.add_argument("--max-epochs", type=int, default=10000)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)


def _lasso_from(ns) -> LassoConfig:
    return LassoConfig(
        n_lambdas=ns.n_lambdas, lambda_ratio=ns.lambda_ratio, optimizer=ns.optimizer,
        max_epochs=ns.max_epochs, step_size=ns.step_size, tolerance=ns.tolerance, seed=ns.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wikiflu", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"wikiflu {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="aggregate hourly dump files into weekly counts")
    p.add_argument("--pageviews", nargs="*", default=[], help="pageviews-YYYYMMDD-HHMMSS[.gz] files")
    p.add_argument("--pagecounts", nargs="*", default=[], help="pagecounts-YYYYMMDD-HHMMSS[.gz] files")
    p.add_argument("--project", required=True, help="language/project code, e.g. it")
    p.add_argument("--pages", help="file with one page title per line (default: all pages)")
    p.add_argument("--cutover", type=_week, default=ingest.DEFAULT_CUTOVER, help="first pageviews week, YYYY-WW")
    p.add_argument("--strict", action="store_true", help="abort on the first malformed line")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rank", help="rank graph pages relative to a reference page")
    p.add_argument("--graph", required=True, help="edge list, source<TAB>target per line")
    p.add_argument("--method", choices=["cyclerank", "ppagerank"], required=True)
    p.add_argument("--ref", required=True, help="reference page title")
    p.add_argument("--k", type=int, default=linkgraph.DEFAULT_K, help="max cycle length (cyclerank)")
    p.add_argument("--max-k", type=int, default=linkgraph.MAX_K)
    p.add_argument("--sigma", choices=sorted(linkgraph.SIGMAS), default="inverse")
    p.add_argument("--damping", type=float, default=0.85)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--top-n", type=int, default=100)
    p.add_argument("--exclude-ref", action="store_true")
    p.add_argument("--out", required=True, help="ranking CSV")
    p.add_argument("--features-out", help="feature list of the top-n pages")

    p = sub.add_parser("build-matrix", help="aligned design matrix for the given seasons")
    p.add_argument("--weekly", required=True)
    p.add_argument("--features", required=True, help="feature list or ranking CSV")
    p.add_argument("--incidence", required=True)
    p.add_argument("--country")
    p.add_argument("--seasons", nargs="+", required=True, help="labels like 2015-2016")
    p.add_argument("--dataset", choices=config.DATASETS, default="PC+PV")
    p.add_argument("--include-week53", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--scaler-out")

    p = sub.add_parser("train", help="leave-one-season-out training")
    p.add_argument("--matrix", required=True)
    p.add_argument("--held-out", nargs="*", help="seasons to predict (default: all)")
    p.add_argument("--paper-faithful", action="store_true",
                   help="standardize with statistics over all rows instead of training rows only")
    p.add_argument("--model-label", default="")
    p.add_argument("--dataset-label", default="")
    _lasso_args(p)
    p.add_argument("--models-out", required=True)
    p.add_argument("--predictions-out", required=True)

    p = sub.add_parser("evaluate", help="per-season PCC and peak scores")
    p.add_argument("--predictions", required=True)
    p.add_argument("--country", default="")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--scores-out", help="per-season CSV")

    p = sub.add_parser("analyze-features", help="top predictors and selection statistics")
    p.add_argument("--models", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--graph")
    p.add_argument("--ref", default="Influenza")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True, help="predictor CSV")
    p.add_argument("--selection-out", required=True, help="selection JSON")

    p = sub.add_parser("synth", help="write a synthetic scenario and its run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seasons", type=int, default=6)
    p.add_argument("--pages", type=int, default=200)
    p.add_argument("--signal-pages", type=int, default=10)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--spike-rate", type=float, default=0.02)
    p.add_argument("--pagecounts-seasons", type=int, default=0)
    p.add_argument("--first-season", type=int, default=2012)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))

    p = sub.add_parser("run-all", help="run the method x dataset grid from run config files")
    p.add_argument("configs", nargs="+", help="TOML run configs, one per country")
    p.add_argument("--out", help="output directory (default: out_dir of the first config)")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--methods", nargs="+", choices=METHODS)
    p.add_argument("--datasets", nargs="+", choices=config.DATASETS)
    p.add_argument("--seed", type=int)
    p.add_argument("--paper-faithful", action="store_true")
    return parser


def _digest(ns) -> str:
    skip = {"verbose", "func"}
    return pipeline.digest_of({k: v for k, v in sorted(vars(ns).items()) if k not in skip})


def cmd_ingest(ns) -> int:
    if not ns.pageviews and not ns.pagecounts:
        raise ConfigError("give --pageviews and/or --pagecounts files")
    pages = _lines(ns.pages) if ns.pages else None
    stats = pipeline.stage_ingest(
        Path(ns.out), ns.pageviews, ns.pagecounts, ns.project, pages, tuple(ns.cutover), ns.strict, ns.jobs, _digest(ns)
    )
    print(f"accepted {stats.accepted} lines ({stats.accepted_requests} requests), "
          f"filtered {stats.filtered}, malformed {stats.malformed}")
    return EXIT_OK


def cmd_rank(ns) -> int:
    fl = pipeline.stage_rank(
        Path(ns.graph), ns.method, ns.ref, Path(ns.out), Path(ns.features_out) if ns.features_out else None,
        ns.top_n, ns.k, ns.sigma, ns.max_k, ns.damping, ns.tol, ns.max_iter, ns.exclude_ref, "", _digest(ns),
    )
    print(f"{ns.method}: {len(fl.titles)} pages selected")
    return EXIT_OK


def cmd_build_matrix(ns) -> int:
    al = pipeline.stage_build_matrix(
        Path(ns.weekly), Path(ns.features), Path(ns.incidence), ns.seasons, Path(ns.out),
        Path(ns.scaler_out) if ns.scaler_out else None, ns.dataset, ns.country, ns.include_week53, _digest(ns),
    )
    print(f"matrix: {al.X.shape[0]} rows x {al.X.shape[1]} columns")
    return EXIT_OK


def cmd_train(ns) -> int:
    res = pipeline.stage_train(
        Path(ns.matrix), _lasso_from(ns), Path(ns.models_out), Path(ns.predictions_out), ns.held_out,
        "global" if ns.paper_faithful else "train", ns.model_label, ns.dataset_label, _digest(ns),
    )
    for f in res.fits:
        print(f"{f.season}: lambda={f.model.lam:.4g} nonzero={f.model.nonzero_count}")
    return EXIT_OK


def cmd_evaluate(ns) -> int:
    rep = pipeline.stage_evaluate(
        Path(ns.predictions), Path(ns.out), Path(ns.scores_out) if ns.scores_out else None, ns.country, _digest(ns)
    )
    print(f"mean PCC {rep.mean_pcc:.3f}  peaks {rep.peak_cell}")
    return EXIT_OK


def cmd_analyze(ns) -> int:
    rep, sel = pipeline.stage_analyze_features(
        Path(ns.models), Path(ns.matrix), Path(ns.out), Path(ns.selection_out),
        Path(ns.graph) if ns.graph else None, ns.ref, ns.k, _digest(ns),
    )
    print(f"selected features min/max/mean: {sel.formatted()}")
    for r in rep.rows:
        print(f"  {r.title}  w={r.mean_weight:.4g}  pcc={r.pcc:.3f}  D_I={r.distance_class}")
    return EXIT_OK


def cmd_synth(ns) -> int:
    scen = synth.SynthScenario(
        seasons=ns.seasons, pages=ns.pages, signal_pages=ns.signal_pages, noise_std=ns.noise_std,
        spike_rate=ns.spike_rate, seed=ns.seed, first_season=ns.first_season,
        pagecounts_seasons=ns.pagecounts_seasons,
    )
    ds = synth.generate(scen)
    out = Path(ns.out)
    paths = synth.write_dataset(ds, out, stamp(_digest(ns)))
    labels = [w.label for w in ds.windows]
    datasets = ["PV", "PC+PV"] if ns.pagecounts_seasons else ["PC+PV"]
    run = {
        "country": scen.country,
        "language": scen.language,
        "datasets": datasets,
        "methods": list(ns.methods),
        "seasons": labels,
        "evaluate_seasons": labels,
        "seed": ns.seed,
        "out_dir": "results",
        "paths": {k: paths[k].name for k in ("weekly", "incidence", "graph", "categories")},
        "ranking": {"reference": scen.reference, "top_n": 60, "exclude_reference": True},
    }
    with open(out / "run.toml", "wb") as fh:
        tomli_w.dump(run, fh)
    print(f"wrote scenario to {out} ({len(ds.series)} pages, {len(labels)} seasons)")
    return EXIT_OK


def cmd_run_all(ns) -> int:
    overrides = {"jobs": ns.jobs, "methods": ns.methods, "datasets": ns.datasets, "seed": ns.seed}
    if ns.seed is not None:
        overrides["lasso.seed"] = ns.seed
    if ns.paper_faithful:
        overrides["standardization"] = "global"
    cfgs = [config.load(p, overrides) for p in ns.configs]
    for c in cfgs:
        c.validate()
    out = Path(ns.out) if ns.out else cfgs[0].resolve(cfgs[0].out_dir)
    results = pipeline.run_all(cfgs, out, ns.jobs or cfgs[0].jobs)
    for r in results:
        status = f"PCC {r.mean_pcc:.3f}  peaks {r.peak_cell}" if r.ok else f"FAILED {r.error}"
        print(f"{r.country:4s} {r.method:11s} {r.dataset:6s} {status}")
    print((out / "table_mean_pcc.txt").read_text(), end="")
    return EXIT_OK if all(r.ok for r in results) else EXIT_PARTIAL


COMMANDS = {
    "ingest": cmd_ingest,
    "rank": cmd_rank,
    "build-matrix": cmd_build_matrix,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "analyze-features": cmd_analyze,
    "synth": cmd_synth,
    "run-all": cmd_run_all,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[ns.command](ns)
    except ConfigError as exc:
        print(f"wikiflu: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        OSError, KeyError, pipeline.DataError, ingest.DumpFormatError, healthdata.IncidenceFormatError,
        linkgraph.GraphFormatError, linkgraph.ConvergenceError, ValueError,
    ) as exc:
        print(f"wikiflu: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
