"""End-to-end run on the bundled fixture through the command-line harness.

Ingests the hourly fixture (adding the $100/MWh surcharge and splitting
on 2023-03-02), scans the elbow over S = 1..12, solves the robust
commitment at a few radii plus the stochastic benchmark, and finishes
with the out-of-sample sweep. Every step writes into ``--out-dir``.

    python3 demos/fixture_pipeline.py --out-dir /tmp/drmuc-demo
"""

import argparse
import json
from pathlib import Path

from drmuc.cli import fixture_path, main as drmuc


def run(*argv):
    code = drmuc([str(a) for a in argv])
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", default="demo-out")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    run("ingest", "--fixture", "--out-dir", out)
    run("cluster", "--s-range", "1..12", "--out-dir", out)
    print((out / "elbow.csv").read_text())

    instance = fixture_path("instance")
    for rho in (0.0, 0.3, 1.0):
        run("solve", "--rho", rho, "--instance", instance, "--out-dir", out, "--output", f"solution_{rho}.json")
    run("solve", "--benchmark-suc", "--instance", instance, "--out-dir", out, "--output", "solution_suc.json")
    for name in ("solution_0.0.json", "solution_0.3.json", "solution_1.0.json", "solution_suc.json"):
        doc = json.loads((out / name).read_text())
        on_hours = sum(int(x) for row in doc["schedule"]["u"] for x in row)
        print(f"{name:20s} objective {doc['objective']:.4f}  iterations {doc['iterations']:3d}  "
              f"unit-hours on {on_hours}")

    run("sweep", "--instance", instance, "--out-dir", out)
    print()
    print((out / "sweep.csv").read_text())


if __name__ == "__main__":
    main()
