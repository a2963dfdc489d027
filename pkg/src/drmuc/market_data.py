"""Hourly load, PV and price records turned into daily net-load/price profiles.

CSV layout (header required, rows in any order)::

    date,hour,load_kw,pv_kw,price_mwh
    2019-06-01,0,1.42,0.0,21.3

Prices arrive in $/MWh and are kept in $/kWh, so that ``lam * p`` with
``p`` in kW over one hour is a dollar amount.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import os
import tempfile
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

__all__ = [
    "HourlyRecord",
    "DailyProfile",
    "Dataset",
    "DataError",
    "CSV_COLUMNS",
    "read_records",
    "profiles_from_records",
    "load_profiles",
    "write_profiles",
    "apply_surcharge",
    "split_dataset",
    "synthetic_records",
    "write_records",
    "SyntheticRegime",
]

CSV_COLUMNS = ("date", "hour", "load_kw", "pv_kw", "price_mwh")
_KWH_PER_MWH = 1000


class DataError(ValueError):
    """Malformed or incomplete input data."""


@dataclass(frozen=True)
class HourlyRecord:
    date: dt.date
    hour: int
    load: float
    pv_generation: float
    price: float  # $/MWh

    def __post_init__(self):
        if self.hour < 0:
            raise DataError(f"{self.date}: negative hour {self.hour}")
        if self.load < 0 or self.pv_generation < 0:
            raise DataError(f"{self.date} hour {self.hour}: load and PV must be nonnegative")


@dataclass(frozen=True)
class DailyProfile:
    """One day of net load (kW) and price ($/kWh)."""

    date: dt.date
    eta: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        if eta.shape != lam.shape or eta.ndim != 1:
            raise DataError(f"{self.date}: eta and lambda must be vectors of equal length")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "lam", lam)

    @property
    def horizon(self) -> int:
        return self.eta.size

    def as_matrix(self) -> np.ndarray:
        """(H, 2) matrix with net load in column 0 and price in column 1."""
        return np.column_stack([self.eta, self.lam])

    def __eq__(self, other):
        if not isinstance(other, DailyProfile):
            return NotImplemented
        return (
            self.date == other.date
            and np.array_equal(self.eta, other.eta)
            and np.array_equal(self.lam, other.lam)
        )


@dataclass(frozen=True)
class Dataset:
    profiles: tuple[DailyProfile, ...]
    horizon: int = 24

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        dates = [p.date for p in self.profiles]
        if len(set(dates)) != len(dates):
            raise DataError("duplicate dates in dataset")
        for p in self.profiles:
            if p.horizon != self.horizon:
                raise DataError(f"{p.date}: profile length {p.horizon} != horizon {self.horizon}")

    def __len__(self):
        return len(self.profiles)

    def __iter__(self):
        return iter(self.profiles)

    @property
    def dates(self) -> list[dt.date]:
        return [p.date for p in self.profiles]

    def matrices(self) -> np.ndarray:
        """Stack of (H, 2) matrices, shape (N, H, 2)."""
        return np.stack([p.as_matrix() for p in self.profiles]) if self.profiles else np.zeros((0, self.horizon, 2))


def _to_float(text: str, what: str, where: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"{where}: non-numeric {what} {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{where}: non-finite {what} {text!r}")
    return value


def _price_per_kwh(text: str, where: str) -> float:
    # Decimal keeps the $/MWh -> $/kWh shift exact, so writing back with
    # write_profiles and re-reading gives identical floats.
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        raise DataError(f"{where}: non-numeric price {text!r}") from None
    if not value.is_finite():
        raise DataError(f"{where}: non-finite price {text!r}")
    return float(value.scaleb(-3))


def read_records(path, schema: dict[str, str] | None = None) -> list[tuple[HourlyRecord, float]]:
    """Parse the hourly CSV.

    ``schema`` maps the canonical column names to the names used in the
    file, for files with a different header. Returns records paired with
    their price already converted to $/kWh.
    """
    names = {c: c for c in CSV_COLUMNS}
    names.update(schema or {})
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in CSV_COLUMNS if names[c] not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(names[c] for c in missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            where = f"{path.name}:{lineno}"
            try:
                date = dt.date.fromisoformat(row[names["date"]].strip())
            except (AttributeError, ValueError):
                raise DataError(f"{where}: bad date {row[names['date']]!r}") from None
            hour_f = _to_float(row[names["hour"]], "hour", where)
            if hour_f != int(hour_f):
                raise DataError(f"{where}: hour must be an integer")
            price_text = row[names["price_mwh"]]
            rec = HourlyRecord(
                date,
                int(hour_f),
                _to_float(row[names["load_kw"]], "load", where),
                _to_float(row[names["pv_kw"]], "pv", where),
                _to_float(price_text, "price", where),
            )
            out.append((rec, _price_per_kwh(price_text, where)))
    if not out:
        raise DataError(f"{path}: empty file")
    return out


def profiles_from_records(records, horizon: int = 24, allow_negative_prices: bool = False) -> Dataset:
    """Group hourly records into daily profiles with ``eta = load - pv``.

    ``records`` holds ``HourlyRecord`` objects or ``(record, price_per_kwh)``
    pairs as returned by :func:`read_records`.
    """
    by_day: dict[dt.date, dict[int, tuple[HourlyRecord, float]]] = {}
    for item in records:
        rec, lam = item if isinstance(item, tuple) else (item, item.price / _KWH_PER_MWH)
        if rec.hour >= horizon:
            raise DataError(f"{rec.date}: hour {rec.hour} outside 0..{horizon - 1}")
        day = by_day.setdefault(rec.date, {})
        if rec.hour in day:
            raise DataError(f"{rec.date}: duplicate hour {rec.hour}")
        day[rec.hour] = (rec, lam)
    profiles = []
    for date in sorted(by_day):
        day = by_day[date]
        if len(day) != horizon:
            raise DataError(f"{date}: incomplete day ({len(day)} of {horizon} hours)")
        eta = np.array([day[h][0].load - day[h][0].pv_generation for h in range(horizon)])
        lam = np.array([day[h][1] for h in range(horizon)])
        if not allow_negative_prices and np.any(lam < 0):
            raise DataError(f"{date}: negative price (needs a finite purchase limit)")
        profiles.append(DailyProfile(date, eta, lam))
    return Dataset(tuple(profiles), horizon)


def load_profiles(path, schema: dict[str, str] | None = None, horizon: int = 24,
                  allow_negative_prices: bool = False) -> Dataset:
    """Read the hourly CSV into a :class:`Dataset`; incomplete days are an error."""
    return profiles_from_records(read_records(path, schema), horizon, allow_negative_prices)


def _atomic_write(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_profiles(dataset: Dataset, path) -> None:
    """Write a dataset back to the hourly CSV layout.

    Positive net load goes to ``load_kw``, negative net load to ``pv_kw``,
    so ``load - pv`` reproduces it exactly. Prices are written as the
    exact decimal shift of their shortest repr, which reloads bit-for-bit.
    """
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in dataset.profiles:
            for h in range(dataset.horizon):
                price = Decimal(repr(float(p.lam[h]))).scaleb(3)
                eta = float(p.eta[h])
                w.writerow([p.date.isoformat(), h, repr(max(eta, 0.0)), repr(max(-eta, 0.0)), _decimal_text(price)])

    _atomic_write(path, write)


def _decimal_text(value: Decimal) -> str:
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text or "0"


def write_records(records, path) -> None:
    """Write raw hourly records (prices in $/MWh) to CSV, sorted by timestamp."""
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in sorted(records, key=lambda r: (r.date, r.hour)):
            w.writerow([r.date.isoformat(), r.hour, repr(r.load), repr(r.pv_generation), repr(r.price)])

    _atomic_write(path, write)


def apply_surcharge(dataset: Dataset, surcharge: float) -> Dataset:
    """Add a flat retail surcharge, given in $/MWh, to every price."""
    if surcharge < 0 or not math.isfinite(surcharge):
        raise DataError(f"surcharge must be a nonnegative number, got {surcharge}")
    if surcharge == 0:
        return dataset
    add = surcharge / _KWH_PER_MWH
    return replace(dataset, profiles=tuple(replace(p, lam=p.lam + add) for p in dataset.profiles))


def split_dataset(dataset: Dataset, boundary: dt.date) -> tuple[Dataset, Dataset]:
    """Days strictly before ``boundary`` train, the rest test."""
    train = tuple(p for p in dataset.profiles if p.date < boundary)
    test = tuple(p for p in dataset.profiles if p.date >= boundary)
    if not train:
        raise DataError(f"empty train split at {boundary}")
    if not test:
        raise DataError(f"empty test split at {boundary}")
    return Dataset(train, dataset.horizon), Dataset(test, dataset.horizon)


@dataclass
class SyntheticRegime:
    """Knobs of the synthetic household/market generator.

    Loads in kW, prices in $/MWh. ``spike_prob`` is the daily chance of an
    evening price spike of mean height ``spike_mwh``.
    """

    base_load: float = 1.0
    evening_load: float = 1.6
    load_noise: float = 0.25
    pv_peak: float = 2.2
    cloud_prob: float = 0.35
    base_price: float = 28.0
    evening_price: float = 22.0
    price_noise: float = 5.0
    spike_prob: float = 0.15
    spike_mwh: float = 80.0


def synthetic_records(start: dt.date, end: dt.date, seed: int, horizon: int = 24,
                      regime: SyntheticRegime | None = None) -> list[HourlyRecord]:
    """Deterministic synthetic hourly records for ``start <= date <= end``.

    Each of the ``horizon`` periods of a day is mapped onto a 24-hour
    clock, so a short horizon still sees the morning/solar/evening cycle.
    """
    regime = regime or SyntheticRegime()
    rng = np.random.default_rng(seed)
    clock = (np.arange(horizon) + 0.5) * 24.0 / horizon
    evening = np.exp(-0.5 * ((clock - 19.0) / 2.5) ** 2)
    morning = np.exp(-0.5 * ((clock - 7.5) / 1.5) ** 2)
    solar = np.clip(np.sin(np.pi * (clock - 6.0) / 14.0), 0.0, None)
    records = []
    day = start
    while day <= end:
        level = 1.0 + 0.15 * rng.standard_normal()
        load = regime.base_load * level + regime.evening_load * evening + 0.5 * morning
        load = np.clip(load + regime.load_noise * rng.standard_normal(horizon), 0.05, None)
        cloud = 0.3 + 0.5 * rng.random() if rng.random() < regime.cloud_prob else 1.0
        pv = np.clip(regime.pv_peak * cloud * solar * (1 + 0.1 * rng.standard_normal(horizon)), 0.0, None)
        price = regime.base_price + regime.evening_price * evening + regime.price_noise * rng.standard_normal(horizon)
        if rng.random() < regime.spike_prob:
            price = price + regime.spike_mwh * (0.5 + rng.random()) * evening
        price = np.clip(price, 0.0, None)
        for h in range(horizon):
            records.append(HourlyRecord(day, h, round(float(load[h]), 4), round(float(pv[h]), 4), round(float(price[h]), 3)))
        day += dt.timedelta(days=1)
    return records
