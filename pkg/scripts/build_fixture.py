"""Regenerate the bundled synthetic fixture in ``src/drmuc/data``.

Training days cycle through three well-separated day types (sunny and
calm, overcast, evening price spike) so the clustering has a known
structure; the last 30 days come from the shifted regime. The derived
files are produced by the CLI itself, so the bundle always matches the
pipeline.
"""

import datetime as dt
import json
import shutil
import tempfile
from pathlib import Path

from drmuc.cli import FIXTURE_SETTINGS, SHIFTED_REGIME, main
from drmuc.market_data import SyntheticRegime, synthetic_records, write_records

DATA = Path(__file__).resolve().parents[1] / "src" / "drmuc" / "data"
START = dt.date(2023, 1, 1)
DAY_TYPES = (
    SyntheticRegime(load_noise=0.1, cloud_prob=0.0, spike_prob=0.0, price_noise=2.0),
    SyntheticRegime(load_noise=0.1, cloud_prob=1.0, spike_prob=0.0, price_noise=2.0, base_price=34.0),
    SyntheticRegime(load_noise=0.1, cloud_prob=0.0, spike_prob=1.0, price_noise=2.0, spike_mwh=120.0),
)
INSTANCE = {
    "horizon": 24,
    "tgrs": [
        {"id": "diesel", "p_min_kw": 0.6, "p_max_kw": 3.0, "min_up_h": 3, "min_down_h": 2,
         "c_p_per_kwh": 0.14, "c_u_per_h": 0.01, "c_v": 0.05, "initial_commitment": 0},
    ],
}


def main_build():
    split = dt.date.fromisoformat(FIXTURE_SETTINGS["split_date"])
    records = []
    day, i = START, 0
    while day < split:
        records += synthetic_records(day, day, seed=1000 + i, regime=DAY_TYPES[i % 3])
        day += dt.timedelta(days=1)
        i += 1
    records += synthetic_records(split, split + dt.timedelta(days=29), seed=77, regime=SHIFTED_REGIME)
    DATA.mkdir(parents=True, exist_ok=True)
    write_records(records, DATA / "fixture_records.csv")
    (DATA / "fixture_instance.json").write_text(json.dumps(INSTANCE, indent=2) + "\n")
    with tempfile.TemporaryDirectory() as tmp:
        common = ["--out-dir", tmp, "--seed", "0"]
        assert main(["ingest", *common, "--data", str(DATA / "fixture_records.csv"),
                     "--surcharge", str(FIXTURE_SETTINGS["surcharge"]),
                     "--split-date", FIXTURE_SETTINGS["split_date"]]) == 0
        assert main(["cluster", *common, "--s-range", "1..12"]) == 0
        shutil.copy(Path(tmp) / "train.csv", DATA / "fixture_train.csv")
        shutil.copy(Path(tmp) / "test.csv", DATA / "fixture_test.csv")
        shutil.copy(Path(tmp) / "scenarios.json", DATA / "fixture_scenarios.json")


if __name__ == "__main__":
    main_build()
