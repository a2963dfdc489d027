import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drmuc.market_data import (
    DailyProfile,
    DataError,
    Dataset,
    HourlyRecord,
    SyntheticRegime,
    apply_surcharge,
    load_profiles,
    profiles_from_records,
    read_records,
    split_dataset,
    synthetic_records,
    write_profiles,
    write_records,
)

HEADER = "date,hour,load_kw,pv_kw,price_mwh\n"


def write_csv(path, rows):
    path.write_text(HEADER + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def day_rows(date, loads, pvs, prices):
    return [(date, h, l, p, c) for h, (l, p, c) in enumerate(zip(loads, pvs, prices))]


def test_zero_pv_gives_load(tmp_path):
    f = write_csv(tmp_path / "a.csv", day_rows("2023-01-01", [2] * 4, [0] * 4, [30] * 4))
    ds = load_profiles(f, horizon=4)
    assert ds.profiles[0].eta.tolist() == [2.0] * 4
    assert ds.profiles[0].lam.tolist() == [0.03] * 4


def test_negative_net_load_admitted(tmp_path):
    f = write_csv(tmp_path / "a.csv", day_rows("2023-01-01", [1, 1], [3, 0], [10, 10]))
    assert load_profiles(f, horizon=2).profiles[0].eta.tolist() == [-2.0, 1.0]


def test_incomplete_day_rejected(tmp_path):
    rows = day_rows("2023-01-01", [1] * 24, [0] * 24, [20] * 24)[:-1]
    f = write_csv(tmp_path / "a.csv", rows)
    with pytest.raises(DataError, match="incomplete day"):
        load_profiles(f)


@pytest.mark.parametrize(
    "rows,match",
    [
        ([("2023-01-01", 0, 1, 0, 5), ("2023-01-01", 0, 1, 0, 5)], "duplicate hour"),
        ([("2023-01-01", 0, "x", 0, 5), ("2023-01-01", 1, 1, 0, 5)], "numeric"),
        ([("2023-01-01", 0, 1, 0, -5), ("2023-01-01", 1, 1, 0, 5)], "negative price"),
        ([("2023-01-01", 0, 1, 0, 5), ("2023-01-01", 7, 1, 0, 5)], "outside"),
    ],
)
def test_malformed_rows(tmp_path, rows, match):
    f = write_csv(tmp_path / "a.csv", rows)
    with pytest.raises(DataError, match=match):
        load_profiles(f, horizon=2)


def test_empty_file(tmp_path):
    f = tmp_path / "e.csv"
    f.write_text(HEADER)
    with pytest.raises(DataError, match="empty"):
        load_profiles(f)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_profiles(tmp_path / "nope.csv")


def test_row_order_and_custom_schema(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("Day,H,L,PV,P\n2023-01-02,1,1,0,10\n2023-01-01,1,2,0,10\n2023-01-02,0,1,0,10\n2023-01-01,0,2,0,10\n")
    schema = {"date": "Day", "hour": "H", "load_kw": "L", "pv_kw": "PV", "price_mwh": "P"}
    ds = load_profiles(f, schema=schema, horizon=2)
    assert ds.dates == [dt.date(2023, 1, 1), dt.date(2023, 1, 2)]


def test_negative_prices_opt_in(tmp_path):
    f = write_csv(tmp_path / "a.csv", day_rows("2023-01-01", [1, 1], [0, 0], [-5, 5]))
    ds = load_profiles(f, horizon=2, allow_negative_prices=True)
    assert ds.profiles[0].lam[0] == pytest.approx(-0.005)


def make_dataset(n_days, H=3, start=dt.date(2023, 6, 1), seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        tuple(DailyProfile(start + dt.timedelta(days=i), rng.normal(2, 1, H), rng.uniform(0, 0.2, H))
              for i in range(n_days)),
        H,
    )


class TestSurcharge:
    def test_zero_is_identity(self):
        ds = make_dataset(3)
        assert apply_surcharge(ds, 0.0) == ds

    def test_unit_conversion(self):
        ds = Dataset((DailyProfile(dt.date(2023, 1, 1), [1.0], [0.020]),), 1)
        out = apply_surcharge(ds, 100.0)
        assert out.profiles[0].lam[0] == pytest.approx(0.12)
        assert np.array_equal(out.profiles[0].eta, ds.profiles[0].eta)

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            apply_surcharge(make_dataset(1), -5.0)


class TestSplit:
    def test_summer_split(self):
        ds = make_dataset(92, start=dt.date(2019, 6, 1))
        train, test = split_dataset(ds, dt.date(2019, 8, 1))
        assert (len(train), len(test)) == (61, 31)

    def test_boundary_before_first_day(self):
        with pytest.raises(DataError, match="empty train"):
            split_dataset(make_dataset(3), dt.date(2000, 1, 1))

    def test_boundary_after_last_day(self):
        with pytest.raises(DataError, match="empty test"):
            split_dataset(make_dataset(3), dt.date(2100, 1, 1))

    def test_second_day_boundary(self):
        ds = make_dataset(5)
        train, _ = split_dataset(ds, ds.dates[1])
        assert train.dates == [ds.dates[0]]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 40), st.data())
    def test_partition_property(self, n, data):
        ds = make_dataset(n)
        k = data.draw(st.integers(1, n - 1))
        train, test = split_dataset(ds, ds.dates[k])
        assert len(train) + len(test) == len(ds)
        assert set(train.dates).isdisjoint(test.dates)
        assert list(train) + list(test) == list(ds)


def test_duplicate_dates_rejected():
    p = DailyProfile(dt.date(2023, 1, 1), [1.0], [0.1])
    with pytest.raises(DataError):
        Dataset((p, p), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_csv_round_trip_is_bit_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    ds = make_dataset(int(rng.integers(1, 6)), H=4, seed=seed)
    ds = Dataset(tuple(DailyProfile(p.date, p.eta * rng.uniform(0.1, 100), p.lam * rng.uniform(0.01, 10))
                       for p in ds), 4)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_profiles(ds, path)
    back = load_profiles(path, horizon=4)
    assert back == ds
    for a, b in zip(back, ds):
        assert a.eta.tobytes() == b.eta.tobytes() and a.lam.tobytes() == b.lam.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50))
def test_eta_shifts_with_load(shift):
    recs = [HourlyRecord(dt.date(2023, 1, 1), h, 60.0 + h, 3.0, 10.0) for h in range(3)]
    moved = [HourlyRecord(r.date, r.hour, r.load + shift, r.pv_generation, r.price) for r in recs]
    a = profiles_from_records(recs, 3).profiles[0].eta
    b = profiles_from_records(moved, 3).profiles[0].eta
    assert np.allclose(b - a, shift, atol=1e-12)


def test_synthetic_is_seeded(tmp_path):
    a = synthetic_records(dt.date(2023, 1, 1), dt.date(2023, 1, 10), seed=4, horizon=6)
    b = synthetic_records(dt.date(2023, 1, 1), dt.date(2023, 1, 10), seed=4, horizon=6)
    c = synthetic_records(dt.date(2023, 1, 1), dt.date(2023, 1, 10), seed=5, horizon=6)
    assert a == b and a != c
    write_records(a, tmp_path / "s.csv")
    ds = load_profiles(tmp_path / "s.csv", horizon=6)
    assert len(ds) == 10
    assert all(np.all(p.lam >= 0) for p in ds)


def test_shifted_regime_has_more_spikes():
    base = synthetic_records(dt.date(2023, 1, 1), dt.date(2023, 3, 31), seed=1, horizon=8)
    shifted = synthetic_records(dt.date(2023, 1, 1), dt.date(2023, 3, 31), seed=1, horizon=8,
                                regime=SyntheticRegime(spike_prob=0.6, spike_mwh=140.0))
    assert np.mean([r.price for r in shifted]) > np.mean([r.price for r in base])


def test_read_records_reports_row(tmp_path):
    f = write_csv(tmp_path / "a.csv", [("2023-13-01", 0, 1, 0, 5)])
    with pytest.raises(DataError):
        read_records(f)
