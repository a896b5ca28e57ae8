import numpy as np
import pytest

from wikiflu import healthdata
from wikiflu.featureset import FeatureMatrix
from wikiflu.healthdata import IncidenceSeries, align, season_window, seasons_between


def write_csv(tmp_path, rows, header="country,iso_year,iso_week,incidence"):
    p = tmp_path / "inc.csv"
    p.write_text(header + "\n" + "\n".join(rows) + "\n")
    return p


class TestSeasonWindow:
    def test_2009_2010(self):
        s = season_window("2009-2010")
        assert len(s) == 26
        assert s.weeks[0] == (2009, 42) and s.weeks[-1] == (2010, 15)

    def test_2015_2016(self):
        s = season_window("2015-2016")
        assert len(s) == 26 and s.weeks[0] == (2015, 42)

    def test_single_year_label(self):
        with pytest.raises(ValueError):
            season_window("2010")

    def test_non_consecutive(self):
        with pytest.raises(ValueError, match="consecutive"):
            season_window("2010-2012")

    def test_week53_flag_and_opt_in(self):
        plain = season_window("2015-2016")
        assert plain.has_week53 and not plain.extended
        wide = season_window("2015-2016", include_week53=True)
        assert len(wide) == 27 and (2015, 53) in wide.weeks
        assert wide.weeks[-1] == (2016, 15)

    def test_52_week_year_unaffected_by_opt_in(self):
        assert len(season_window("2016-2017", include_week53=True)) == 26

    def test_weeks_strictly_increasing(self):
        w = season_window("2020-2021", include_week53=True).weeks
        assert list(w) == sorted(set(w))

    def test_seasons_between(self):
        labels = [s.label for s in seasons_between("2007-2008", "2018-2019")]
        assert len(labels) == 12 and labels[0] == "2007-2008" and labels[-1] == "2018-2019"

    @pytest.mark.parametrize("week,label", [((2015, 42), "2015-2016"), ((2016, 15), "2015-2016"), ((2016, 30), None)])
    def test_season_of(self, week, label):
        assert healthdata.season_of(week) == label


class TestLoad:
    def test_one_season(self, tmp_path):
        rows = [f"IT,{y},{w},{i * 0.5}" for i, (y, w) in enumerate(season_window("2015-2016").weeks)]
        inc = healthdata.load_incidence_csv(write_csv(tmp_path, rows))
        assert inc.country == "IT" and len(inc.points) == 26

    def test_duplicate_week_named(self, tmp_path):
        p = write_csv(tmp_path, ["IT,2015,42,1.0", "IT,2015,42,2.0"])
        with pytest.raises(healthdata.IncidenceFormatError, match="2015-W42"):
            healthdata.load_incidence_csv(p)

    def test_negative(self, tmp_path):
        with pytest.raises(healthdata.IncidenceFormatError):
            healthdata.load_incidence_csv(write_csv(tmp_path, ["IT,2015,42,-1"]))

    def test_malformed(self, tmp_path):
        with pytest.raises(healthdata.IncidenceFormatError, match="malformed"):
            healthdata.load_incidence_csv(write_csv(tmp_path, ["IT,2015,forty,1"]))

    def test_bad_header(self, tmp_path):
        with pytest.raises(healthdata.IncidenceFormatError, match="header"):
            healthdata.load_incidence_csv(write_csv(tmp_path, ["IT,2015,42,1"], header="a,b,c,d"))

    def test_country_filter(self, tmp_path):
        p = write_csv(tmp_path, ["IT,2015,42,1", "DE,2015,42,2"])
        assert healthdata.load_incidence_csv(p, "DE").points == {(2015, 42): 2.0}
        with pytest.raises(healthdata.IncidenceFormatError, match="several countries"):
            healthdata.load_incidence_csv(p)

    def test_round_trip(self, tmp_path):
        inc = IncidenceSeries("NL", {(2016, 1): 0.1, (2015, 50): 12.25})
        healthdata.write_incidence_csv(inc, tmp_path / "o.csv", "stamp")
        assert healthdata.load_incidence_csv(tmp_path / "o.csv").points == inc.points


def full_range(first, last):
    seasons = seasons_between(first, last)
    weeks = [w for s in seasons for w in s.weeks]
    inc = IncidenceSeries("XX", {w: float(i) for i, w in enumerate(weeks)})
    feats = FeatureMatrix(list(reversed(weeks)), ["a"], np.arange(len(weeks), dtype=float)[::-1, None], 1)
    return inc, feats, seasons


class TestAlign:
    def test_two_seasons(self):
        inc, feats, seasons = full_range("2015-2016", "2016-2017")
        ds = align(inc, feats, seasons)
        assert ds.X.shape == (52, 1) and ds.y.shape == (52,)

    @pytest.mark.parametrize("first,last,n", [("2007-2008", "2018-2019", 312), ("2010-2011", "2018-2019", 234)])
    def test_full_range_counts(self, first, last, n):
        inc, feats, seasons = full_range(first, last)
        assert len(align(inc, feats, seasons).rows) == n == 26 * len(seasons)

    def test_row_target_bijection(self):
        inc, feats, seasons = full_range("2014-2015", "2016-2017")
        ds = align(inc, feats, seasons)
        # feature value and target were both built from the same week index
        np.testing.assert_array_equal(ds.X[:, 0], ds.y)
        assert len(set(ds.rows)) == len(ds.rows)
        assert list(ds.season_rows("2015-2016")) == list(range(26, 52))

    def test_missing_incidence(self):
        inc, feats, seasons = full_range("2015-2016", "2016-2017")
        del inc.points[(2016, 3)]
        with pytest.raises(KeyError, match="2016-W03"):
            align(inc, feats, seasons)
