import json

import numpy as np
import pytest

from wikiflu import healthdata, ingest, synth
from wikiflu.regress import LassoRegression, lambda_max
from wikiflu.synth import SynthScenario, generate


def matrix(ds):
    titles = sorted(ds.series)
    X = np.array([[ds.series[t].counts[w] for t in titles] for w in ds.axis])
    return titles, X, ds.incidence.values(ds.axis)


def test_noiseless_identity():
    ds = generate(SynthScenario(seasons=2, pages=5, signal_pages=1, true_weights=[1.0], noise_std=0.0, spike_rate=0.0))
    page = ds.truth["signal_pages"][0]
    got = np.array([ds.series[page].counts[w] for w in ds.axis])
    assert np.array_equal(got, ds.incidence.values(ds.axis))


def test_same_seed_same_data():
    a = generate(SynthScenario(seed=3, pages=30))
    b = generate(SynthScenario(seed=3, pages=30))
    assert a.truth == b.truth and a.edges == b.edges
    assert all(a.series[t].counts == b.series[t].counts for t in a.series)
    assert generate(SynthScenario(seed=4, pages=30)).truth != a.truth


def test_spike_count_binomial():
    s = SynthScenario(seasons=6, pages=200, spike_rate=0.05, seed=1)
    n = 200 * 156
    mean, sd = 0.05 * n, np.sqrt(n * 0.05 * 0.95)
    assert abs(generate(s).truth["spike_events"] - mean) <= 4 * sd


def test_peaks_inside_windows():
    ds = generate(SynthScenario(seasons=6, pages=10, seed=2))
    for win in ds.windows:
        peak = tuple(ds.truth["peak_weeks"][win.label])
        assert peak in win.weeks
        assert peak[1] >= 49 or peak[1] <= 8


@pytest.mark.parametrize("seed", range(3))
def test_noiseless_weights_recovered(seed):
    # the regression maps pages to incidence, so a signal page with weight w gets coefficient 1/w
    ds = generate(SynthScenario(seasons=4, pages=30, signal_pages=1, noise_std=0.0, spike_rate=0.0, seed=seed))
    titles, X, y = matrix(ds)
    mu, sd = X.mean(axis=0), X.std(axis=0)
    Z = (X - mu) / sd
    m = LassoRegression(alpha=1e-6 * lambda_max(Z, y), tol=1e-12, max_epochs=200000).fit(Z, y)
    coef = m.coef_ / sd
    page = ds.truth["signal_pages"][0]
    j = titles.index(page)
    assert abs(1.0 / coef[j] - ds.truth["weights"][page]) <= 1e-3
    assert np.abs(np.delete(coef, j)).max() <= 1e-3


def test_signal_pages_on_short_cycles():
    ds = generate(SynthScenario(pages=40, seed=5))
    out = {}
    for a, b in ds.edges:
        out.setdefault(a, set()).add(b)
    for t in ds.truth["signal_pages"]:
        assert t in out["Influenza"]


@pytest.mark.parametrize("kw", [dict(signal_pages=5, pages=3), dict(noise_std=-1), dict(spike_rate=2), dict(true_weights=[1.0]), dict(signal_pages=1, true_weights=[-1.0])])
def test_invalid_scenarios(kw):
    with pytest.raises(ValueError):
        SynthScenario(**kw)


def test_written_files_load_with_pipeline_readers(tmp_path):
    ds = generate(SynthScenario(seasons=2, pages=12, seed=0, pagecounts_seasons=1))
    paths = synth.write_dataset(ds, tmp_path, "wikiflu 0.1.0 config=000000000000")
    weekly = ingest.read_weekly_csv(paths["weekly"])
    assert set(weekly) == set(ds.series)
    first = ds.windows[0].weeks[0]
    assert weekly["Page_000"].provenance[first] == "pagecounts"
    assert weekly["Page_000"].provenance[ds.windows[1].weeks[0]] == "pageviews"
    inc = healthdata.load_incidence_csv(paths["incidence"])
    assert inc.points == ds.incidence.points
    assert json.loads(paths["truth"].read_text())["spike_events"] == ds.truth["spike_events"]
    assert paths["graph"].read_text().startswith("# wikiflu")
