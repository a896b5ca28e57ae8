import gzip
import json

import pytest
import tomli
import tomli_w

from wikiflu import cli


def data_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    out = tmp_path_factory.mktemp("scen")
    code = cli.main(["synth", "--out", str(out), "--seasons", "4", "--pages", "40", "--signal-pages", "4", "--seed", "1"])
    assert code == 0
    return out


def test_synth_writes_inputs_and_config(scenario):
    for name in ("weekly.csv", "incidence.csv", "graph.tsv", "categories.txt", "truth.json", "run.toml"):
        assert (scenario / name).exists()
    run = tomli.loads((scenario / "run.toml").read_text())
    assert run["seasons"] == ["2012-2013", "2013-2014", "2014-2015", "2015-2016"]
    assert (scenario / "weekly.csv").read_text().startswith("# wikiflu 0.1.0 config=")


def test_rank_cyclerank(scenario, tmp_path):
    out = tmp_path / "r.csv"
    assert cli.main(["rank", "--graph", str(scenario / "graph.tsv"), "--method", "cyclerank", "--ref", "Influenza", "--k", "4", "--out", str(out)]) == 0
    lines = data_lines(out)
    assert lines[0] == "rank,title,score"
    assert lines[1].startswith("1,Influenza,")


def test_ingest_gzip(tmp_path, capsys):
    for stamp, n in (("20161010-000000", 3), ("20161010-010000", 4)):
        with gzip.open(tmp_path / f"pageviews-{stamp}.gz", "wt") as fh:
            fh.write(f"it Influenza {n} 0\nit broken line\nde Grippe 9 0\n")
    out = tmp_path / "weekly.csv"
    files = [str(p) for p in sorted(tmp_path.glob("pageviews-*.gz"))]
    assert cli.main(["ingest", "--project", "it", "--pageviews", *files, "--out", str(out)]) == 0
    assert data_lines(out) == ["page,iso_year,iso_week,count,provenance", "Influenza,2016,41,7,pageviews"]
    assert "malformed 2" in capsys.readouterr().out


def test_stages_compose_to_run_all(scenario, tmp_path):
    grid = tmp_path / "grid"
    assert cli.main(["run-all", str(scenario / "run.toml"), "--out", str(grid), "--methods", "cyclerank"]) == 0
    cell = grid / "XX" / "cyclerank" / "PC_PV"

    run = tomli.loads((scenario / "run.toml").read_text())
    s = tmp_path / "stages"
    s.mkdir()
    steps = [
        ["rank", "--graph", str(scenario / "graph.tsv"), "--method", "cyclerank", "--ref", "Influenza",
         "--top-n", "60", "--exclude-ref", "--out", str(s / "ranking.csv"), "--features-out", str(s / "features.txt")],
        ["build-matrix", "--weekly", str(scenario / "weekly.csv"), "--features", str(s / "features.txt"),
         "--incidence", str(scenario / "incidence.csv"), "--seasons", *run["seasons"], "--dataset", "PC+PV",
         "--out", str(s / "matrix.csv")],
        ["train", "--matrix", str(s / "matrix.csv"), "--model-label", "cyclerank", "--dataset-label", "PC+PV",
         "--models-out", str(s / "models.json"), "--predictions-out", str(s / "predictions.csv")],
        ["evaluate", "--predictions", str(s / "predictions.csv"), "--country", "XX",
         "--out", str(s / "report.json"), "--scores-out", str(s / "scores.csv")],
        ["analyze-features", "--models", str(s / "models.json"), "--matrix", str(s / "matrix.csv"),
         "--graph", str(scenario / "graph.tsv"), "--ref", "Influenza", "--k", "5",
         "--out", str(s / "predictors.csv"), "--selection-out", str(s / "selection.json")],
    ]
    for argv in steps:
        assert cli.main(argv) == 0, argv
    for name in ("ranking.csv", "features.txt", "matrix.csv", "predictions.csv", "scores.csv", "predictors.csv"):
        assert data_lines(s / name) == data_lines(cell / name), name
    a = json.loads((s / "report.json").read_text())["report"]
    b = json.loads((cell / "report.json").read_text())["report"]
    assert a == b


def test_every_output_is_stamped(scenario, tmp_path):
    grid = tmp_path / "grid"
    assert cli.main(["run-all", str(scenario / "run.toml"), "--out", str(grid), "--methods", "categories"]) == 0
    for p in grid.rglob("*"):
        if p.suffix == ".json":
            assert json.loads(p.read_text())["meta"]["tool"].startswith("wikiflu 0.1.0 config="), p
        elif p.is_file():
            assert p.read_text().startswith("# wikiflu 0.1.0 config="), p


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert "run-all" in capsys.readouterr().out


def test_usage_error():
    assert cli.main(["rank", "--method", "cyclerank"]) == 1


def test_missing_config_file(tmp_path):
    assert cli.main(["run-all", str(tmp_path / "none.toml")]) == 1


def test_missing_input_is_config_error(scenario, tmp_path, capsys):
    run = tomli.loads((scenario / "run.toml").read_text())
    run["paths"]["graph"] = "nowhere.tsv"
    p = scenario / "broken.toml"
    p.write_bytes(tomli_w.dumps(run).encode())
    assert cli.main(["run-all", str(p), "--out", str(tmp_path)]) == 1
    assert "paths.graph" in capsys.readouterr().err


def test_data_error(tmp_path):
    g = tmp_path / "g.tsv"
    g.write_text("A\tB\n")
    assert cli.main(["rank", "--graph", str(g), "--method", "ppagerank", "--ref", "Z", "--out", str(tmp_path / "r.csv")]) == 2


def test_partial_grid_failure(scenario, tmp_path):
    run = tomli.loads((scenario / "run.toml").read_text())
    run["ranking"]["reference"] = "Not_A_Page"
    run["methods"] = ["categories", "ppagerank"]
    p = scenario / "partial.toml"
    p.write_bytes(tomli_w.dumps(run).encode())
    assert cli.main(["run-all", str(p), "--out", str(tmp_path / "grid")]) == 3
    table = (tmp_path / "grid" / "table_mean_pcc.txt").read_text()
    assert "categories/PC+PV" in table
