"""Synthetic incidence and pageview data with a planted linear signal.

Incidence follows one Gaussian bump per season. A few "signal" pages are
noisy positive multiples of incidence; all other pages are AR(1) noise
around a random level. Any page-week can receive a multiplicative burst
mimicking a news-driven spike.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .healthdata import IncidenceSeries, SeasonWindow, season_window, write_incidence_csv
from .ingest import PAGECOUNTS, PAGEVIEWS, WeeklySeries, write_weekly_csv

# season index range of weeks 49..52 and 1..8 in a 26-week window
PEAK_FIRST, PEAK_LAST = 7, 18


@dataclass
class SynthScenario:
    """Generator settings.

    ``noise_std`` is relative: each signal page gets Gaussian noise with
    standard deviation ``noise_std`` times the std of its clean signal.
    """

    seasons: int = 6
    pages: int = 200
    signal_pages: int = 10
    true_weights: list[float] | None = None
    noise_std: float = 0.1
    spike_rate: float = 0.02
    seed: int = 0
    first_season: int = 2012
    country: str = "XX"
    language: str = "xx"
    reference: str = "Influenza"
    pagecounts_seasons: int = 0

    def __post_init__(self):
        if self.signal_pages > self.pages:
            raise ValueError("signal_pages cannot exceed pages")
        if self.seasons < 1 or self.pages < 1:
            raise ValueError("need at least one season and one page")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0.0 <= self.spike_rate <= 1.0:
            raise ValueError("spike_rate must be a probability")
        if self.true_weights is not None:
            if len(self.true_weights) != self.signal_pages:
                raise ValueError("need one true weight per signal page")
            if any(w <= 0 for w in self.true_weights):
                raise ValueError("true weights must be positive")


@dataclass
class SynthDataset:
    scenario: SynthScenario
    windows: list[SeasonWindow]
    series: dict[str, WeeklySeries]
    incidence: IncidenceSeries
    edges: list[tuple[str, str]]
    truth: dict = field(default_factory=dict)

    @property
    def axis(self) -> list[tuple[int, int]]:
        return [w for s in self.windows for w in s.weeks]


def generate(s: SynthScenario) -> SynthDataset:
    rng = np.random.default_rng(s.seed)
    windows = [season_window(f"{y}-{y + 1}") for y in range(s.first_season, s.first_season + s.seasons)]
    axis = [w for win in windows for w in win.weeks]
    n_weeks = len(axis)

    inc = np.empty(n_weeks)
    peaks = []
    pos = 0
    for win in windows:
        t = np.arange(len(win))
        peak = int(rng.integers(PEAK_FIRST, PEAK_LAST + 1))
        amp = rng.uniform(200.0, 800.0)
        width = rng.uniform(2.0, 4.0)
        base = rng.uniform(2.0, 5.0)
        inc[pos : pos + len(win)] = base + amp * np.exp(-((t - peak) ** 2) / (2 * width**2))
        peaks.append(win.weeks[peak])
        pos += len(win)

    titles = [f"Page_{i:03d}" for i in range(s.pages)]
    signal_idx = sorted(rng.choice(s.pages, size=s.signal_pages, replace=False).tolist())
    weights = (
        list(s.true_weights)
        if s.true_weights is not None
        else rng.uniform(0.5, 2.0, size=s.signal_pages).round(3).tolist()
    )
    weight_of = dict(zip(signal_idx, weights))

    values = np.empty((s.pages, n_weeks))
    for i in range(s.pages):
        if i in weight_of:
            clean = weight_of[i] * inc
            noise = rng.normal(0.0, 1.0, n_weeks) * (s.noise_std * clean.std())
            values[i] = clean + noise if s.noise_std > 0 else clean
        else:
            level = rng.uniform(50.0, 500.0)
            ar = np.empty(n_weeks)
            ar[0] = rng.normal(0.0, 0.1 * level)
            eps = rng.normal(0.0, 0.1 * level, n_weeks)
            for k in range(1, n_weeks):
                ar[k] = 0.8 * ar[k - 1] + eps[k]
            values[i] = level + ar

    spikes = rng.random((s.pages, n_weeks)) < s.spike_rate
    factors = 1.0 + rng.uniform(1.0, 3.0, size=(s.pages, n_weeks))
    values = np.where(spikes, values * factors, values)
    values = np.maximum(values, 0.0)

    pc_weeks = {w for win in windows[: s.pagecounts_seasons] for w in win.weeks}
    series = {}
    for i, t in enumerate(titles):
        counts = {w: float(values[i, k]) for k, w in enumerate(axis)}
        prov = {w: PAGECOUNTS if w in pc_weeks else PAGEVIEWS for w in axis}
        series[t] = WeeklySeries(t, counts, prov)

    incidence = IncidenceSeries(s.country, {w: float(v) for w, v in zip(axis, inc)})
    edges = _graph(rng, s.reference, titles, signal_idx)
    truth = {
        "signal_pages": [titles[i] for i in signal_idx],
        "weights": {titles[i]: w for i, w in zip(signal_idx, weights)},
        "peak_weeks": {win.label: list(p) for win, p in zip(windows, peaks)},
        "spike_events": int(spikes.sum()),
        "scenario": asdict(s),
    }
    return SynthDataset(s, windows, series, incidence, edges, truth)


def _graph(rng, ref: str, titles: list[str], signal_idx: list[int]) -> list[tuple[str, str]]:
    """Signal pages sit on short cycles through ``ref``; decoys link at random."""
    edges: set[tuple[str, str]] = set()
    sig = [titles[i] for i in signal_idx]
    for k, t in enumerate(sig):
        if k % 2 == 0:
            edges.update({(ref, t), (t, ref)})
        else:
            # reach ref back through the previous signal page: a 3-cycle
            edges.update({(ref, t), (t, sig[k - 1])})
    decoys = [t for i, t in enumerate(titles) if i not in set(signal_idx)]
    for t in decoys:
        for j in rng.choice(len(titles), size=3, replace=False):
            if titles[j] != t:
                edges.add((t, titles[j]))
        u = rng.random()
        if u < 0.2:
            edges.add((ref, t))
        elif u < 0.25:
            edges.update({(ref, t), (t, ref)})
    return sorted(edges)


def write_dataset(ds: SynthDataset, out_dir: str | Path, header_comment: str | None = None) -> dict[str, Path]:
    """Write the weekly, incidence, graph, categories and truth files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "weekly": out / "weekly.csv",
        "incidence": out / "incidence.csv",
        "graph": out / "graph.tsv",
        "categories": out / "categories.txt",
        "truth": out / "truth.json",
    }
    write_weekly_csv(ds.series, paths["weekly"], header_comment)
    write_incidence_csv(ds.incidence, paths["incidence"], header_comment)
    with open(paths["graph"], "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for a, b in ds.edges:
            fh.write(f"{a}\t{b}\n")
    with open(paths["categories"], "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for t in sorted(ds.series):
            fh.write(t + "\n")
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(ds.truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
