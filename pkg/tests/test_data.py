import datetime as dt
import json

import numpy as np
import pytest

from seaicecast.grids import GridField, GridGeometry, regrid_bilinear
from seaicecast.series import (
    FieldSeries,
    SplitScheme,
    SynthConfig,
    climatology_forecast,
    load_series,
    make_training_pairs,
    save_series,
    sparsify_weekly,
    split_series,
    synth_generate,
    week_start,
)


def weekly_series(years=3, h=6, w=5, start_year=2000, fill=None, rng=None):
    timestamps = [
        week_start(start_year + y, wk) for y in range(years) for wk in range(52)
    ]
    if fill is not None:
        values = np.full((len(timestamps), h, w), fill)
    else:
        rng = rng or np.random.default_rng(0)
        values = rng.uniform(size=(len(timestamps), h, w))
    return FieldSeries(values, np.ones((h, w), bool), timestamps, "weekly")


def daily_series(days, h=4, w=4, start=dt.date(2001, 1, 1)):
    timestamps = [start + dt.timedelta(days=i) for i in range(days)]
    values = np.linspace(0, 1, days)[:, None, None] * np.ones((h, w))
    return FieldSeries(values, np.ones((h, w), bool), timestamps, "daily")


class TestSifFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        series = weekly_series()
        # storage is float32; use exactly-representable values
        series = FieldSeries(
            series.values.astype(np.float32).astype(np.float64),
            series.mask,
            series.timestamps,
            series.cadence,
        )
        path = save_series(series, tmp_path / "s.json")
        loaded = load_series(path)
        assert np.array_equal(loaded.values, series.values)
        assert np.array_equal(loaded.mask, series.mask)
        assert loaded.timestamps == series.timestamps
        assert loaded.cadence == "weekly"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_series(tmp_path / "nope.json")

    def test_payload_size_mismatch(self, tmp_path):
        series = weekly_series(years=1)
        path = save_series(series, tmp_path / "s.json")
        header = json.loads(path.read_text())
        header["timestamps"].append("2001-01-01")
        path.write_text(json.dumps(header))
        with pytest.raises(ValueError, match="payload"):
            load_series(path)

    def test_out_of_range_value_names_cell(self, tmp_path):
        series = weekly_series(years=1)
        path = save_series(series, tmp_path / "s.json")
        data = np.fromfile(tmp_path / "s.data.bin", dtype="<f4")
        data[7] = 1.7
        data.tofile(tmp_path / "s.data.bin")
        with pytest.raises(ValueError, match=r"1.7.*frame 0, row 1, col 2"):
            load_series(path)

    def test_non_monotone_timestamps_rejected(self):
        ts = [dt.date(2001, 1, 1), dt.date(2001, 1, 1)]
        with pytest.raises(ValueError, match="increasing"):
            FieldSeries(np.zeros((2, 2, 2)), np.ones((2, 2), bool), ts, "daily")


class TestRegrid:
    def test_identity(self):
        rng = np.random.default_rng(1)
        geom = GridGeometry(8, 8, 14.0, 14.0)
        field = GridField(rng.uniform(size=(8, 8)), np.ones((8, 8), bool))
        out = regrid_bilinear(field, geom, geom)
        assert np.allclose(out.values, field.values, atol=1e-12)
        assert out.mask.all()

    def test_constant_preserved(self):
        src = GridGeometry(10, 10, 1.0, 1.0)
        dst = GridGeometry(17, 13, 9.0 / 16.0, 9.0 / 12.0)
        field = GridField(np.full((10, 10), 0.42), np.ones((10, 10), bool))
        out = regrid_bilinear(field, src, dst)
        assert np.allclose(out.values[out.mask], 0.42, atol=1e-12)

    def test_linear_ramp_exact(self):
        # bilinear interpolation reproduces linear functions exactly
        src = GridGeometry(10, 10, 1.0, 1.0)
        dst = GridGeometry(14, 14, 9.0 / 13.0, 9.0 / 13.0)
        ys, xs = src.sample_coords()
        ramp = np.tile(xs / 9.0, (10, 1))
        out = regrid_bilinear(GridField(ramp, np.ones((10, 10), bool)), src, dst)
        _, dst_xs = dst.sample_coords()
        expected = np.tile(dst_xs / 9.0, (14, 1))
        assert np.abs(out.values - expected).max() < 1e-12

    def test_convexity(self):
        rng = np.random.default_rng(2)
        src = GridGeometry(9, 9, 1.0, 1.0)
        dst = GridGeometry(20, 20, 8.0 / 19.0, 8.0 / 19.0)
        vals = rng.uniform(0.2, 0.8, size=(9, 9))
        out = regrid_bilinear(GridField(vals, np.ones((9, 9), bool)), src, dst)
        assert out.values[out.mask].min() >= vals.min() - 1e-12
        assert out.values[out.mask].max() <= vals.max() + 1e-12

    def test_masked_source_renormalized(self):
        src = GridGeometry(4, 4, 1.0, 1.0)
        vals = np.full((4, 4), 0.5)
        mask = np.ones((4, 4), bool)
        vals[1, 1] = 0.0  # land cell value is irrelevant
        mask[1, 1] = False
        out = regrid_bilinear(GridField(vals, mask), src, src)
        # valid neighbourhoods still reconstruct the constant
        assert np.allclose(out.values[out.mask], 0.5, atol=1e-12)
        assert not out.mask[1, 1]

    def test_outside_extent_masked(self):
        src = GridGeometry(4, 4, 1.0, 1.0)
        dst = GridGeometry(4, 4, 1.0, 1.0, y0=-2.0, x0=-2.0)
        field = GridField(np.full((4, 4), 0.5), np.ones((4, 4), bool))
        out = regrid_bilinear(field, src, dst)
        assert not out.mask[0, 0]
        assert out.mask[3, 3]

    def test_degenerate_geometry(self):
        with pytest.raises(ValueError, match="degenerate|positive"):
            GridGeometry(4, 4, 0.0, 1.0)


class TestSparsify:
    def test_365_days_gives_52_weeks(self):
        out = sparsify_weekly(daily_series(365))
        assert len(out) == 52
        assert out.cadence == "weekly"
        days = [t.timetuple().tm_yday for t in out.timestamps]
        assert days == list(range(1, 359, 7))

    def test_leap_year_gives_52_weeks(self):
        out = sparsify_weekly(daily_series(366, start=dt.date(2004, 1, 1)))
        assert len(out) == 52

    def test_values_untouched(self):
        series = daily_series(365)
        out = sparsify_weekly(series)
        assert np.array_equal(out.values, series.values[0:358:7])

    def test_too_short(self):
        with pytest.raises(ValueError, match="short"):
            sparsify_weekly(daily_series(5))

    def test_weekly_input_rejected(self):
        with pytest.raises(ValueError, match="daily"):
            sparsify_weekly(weekly_series())


class TestTrainingPairs:
    def test_single_pair(self):
        series = weekly_series(years=3)  # 156 frames
        pairs = make_training_pairs(series, k=104, n=52, stride=52)
        assert len(pairs) == 1
        assert pairs[0].input.shape[0] == 104
        assert pairs[0].target.shape[0] == 52

    def test_two_pairs_shifted_one_year(self):
        series = weekly_series(years=4)  # 208 frames
        pairs = make_training_pairs(series, k=104, n=52, stride=52)
        assert len(pairs) == 2
        assert (pairs[1].issue_date.year - pairs[0].issue_date.year) == 1

    def test_windowing_invariant(self):
        series = weekly_series(years=4)
        for pair in make_training_pairs(series, k=10, n=52, stride=17):
            t = series.index_of(pair.issue_date)
            assert np.array_equal(pair.input[-1], series.values[t - 1])
            assert np.array_equal(pair.target[0], series.values[t])

    def test_too_short(self):
        with pytest.raises(ValueError, match="length"):
            make_training_pairs(weekly_series(years=2), k=104, n=52)


class TestClimatology:
    def test_periodic_series_reproduced_exactly(self):
        rng = np.random.default_rng(3)
        one_year = rng.uniform(size=(52, 5, 4))
        values = np.tile(one_year, (7, 1, 1))
        timestamps = [week_start(2000 + y, w) for y in range(7) for w in range(52)]
        series = FieldSeries(values, np.ones((5, 4), bool), timestamps, "weekly")
        bundle = climatology_forecast(series, dt.date(2006, 1, 1))
        assert np.abs(bundle.values - one_year).max() < 1e-12

    def test_mean_of_five_years(self):
        series = weekly_series(years=6, fill=0.0)
        vals = series.values.copy()
        for y, v in enumerate([0.2, 0.4, 0.6, 0.8, 1.0]):
            vals[y * 52 + 10, 2, 2] = v
        series = FieldSeries(vals, series.mask, series.timestamps, "weekly")
        bundle = climatology_forecast(series, dt.date(2005, 1, 1))
        assert bundle.values[10, 2, 2] == pytest.approx(0.6)

    def test_within_contributing_bounds(self):
        series = weekly_series(years=6, rng=np.random.default_rng(4))
        bundle = climatology_forecast(series, dt.date(2005, 1, 1))
        hist = series.values[: 5 * 52].reshape(5, 52, 6, 5)
        assert (bundle.values >= hist.min(axis=0) - 1e-12).all()
        assert (bundle.values <= hist.max(axis=0) + 1e-12).all()

    def test_insufficient_history(self):
        series = weekly_series(years=4)
        with pytest.raises(ValueError, match="history"):
            climatology_forecast(series, dt.date(2003, 1, 1))


class TestSynth:
    def test_deterministic_per_seed(self):
        cfg = SynthConfig(height=8, width=8, years=2, noise=0.05)
        a = synth_generate(cfg, seed=9)
        b = synth_generate(cfg, seed=9)
        assert np.array_equal(a.values, b.values)
        c = synth_generate(cfg, seed=10)
        assert not np.array_equal(a.values, c.values)

    def test_periodic_without_noise_or_trend(self):
        cfg = SynthConfig(height=8, width=8, years=3, noise=0.0, trend=0.0)
        series = synth_generate(cfg, seed=0)
        assert np.array_equal(series.values[:52], series.values[52:104])

    def test_bounds_and_mask(self):
        cfg = SynthConfig(height=8, width=8, years=2, noise=0.3, land_rows=2)
        series = synth_generate(cfg, seed=1)
        assert series.values.min() >= 0.0 and series.values.max() <= 1.0
        assert not series.mask[-2:, :].any()
        assert not series.values[:, -2:, :].any()

    def test_invalid_config(self):
        with pytest.raises(ValueError, match="grid size"):
            synth_generate(SynthConfig(height=0, width=8), seed=0)


class TestSplit:
    def make_series(self):
        return weekly_series(years=27, h=3, w=3, start_year=1996)

    def test_protocol_phase_sizes(self):
        scheme = SplitScheme((1996, 2009), (2010, 2015), (1996, 2015), (2016, 2022))
        a, b, c, d = split_series(self.make_series(), scheme)
        assert [len(s) for s in (a, b, c, d)] == [14 * 52, 6 * 52, 20 * 52, 7 * 52]

    def test_empty_range(self):
        scheme = SplitScheme((1996, 2009), (2010, 2009), (1996, 2015), (2016, 2022))
        _, b, _, _ = split_series(self.make_series(), scheme)
        assert len(b) == 0

    def test_retrain_and_test_partition(self):
        scheme = SplitScheme((1996, 2009), (2010, 2015), (1996, 2015), (2016, 2022))
        _, _, retrain, test = split_series(self.make_series(), scheme)
        years = sorted({t.year for t in retrain.timestamps}
                       | {t.year for t in test.timestamps})
        assert years == list(range(1996, 2023))
        assert not ({t.year for t in retrain.timestamps}
                    & {t.year for t in test.timestamps})

    def test_range_outside_series(self):
        scheme = SplitScheme((1990, 2009), (2010, 2015), (1996, 2015), (2016, 2022))
        with pytest.raises(ValueError, match="outside"):
            split_series(self.make_series(), scheme)
