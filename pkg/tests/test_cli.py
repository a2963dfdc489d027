import csv
import json
import re
import shutil
import subprocess
import sys

import pytest

from drmuc.cli import DEFAULTS, build_parser, main

ERROR_LINE = re.compile(r'^error: code=(\d) kind=([a-z-]+) message=(".*")$')


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def error_of(err):
    line = err.strip().splitlines()[-1]
    m = ERROR_LINE.match(line)
    assert m, line
    json.loads(m.group(3))
    return int(m.group(1)), m.group(2)


class TestHelp:
    def test_every_flag_listed(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--config", "--seed", "--out-dir", "--threads"):
            assert flag in text
        for cmd, opts in DEFAULTS.items():
            if cmd == "common":
                continue
            assert cmd in text
            for key in opts:
                assert "--" + key.replace("_", "-") in text, (cmd, key)

    @pytest.mark.parametrize("cmd", ["synth", "ingest", "cluster", "solve", "sweep"])
    def test_subcommand_help(self, cmd, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args([cmd, "--help"])
        text = capsys.readouterr().out
        for key in DEFAULTS[cmd]:
            assert "--" + key.replace("_", "-") in text
        for flag in ("--config", "--seed", "--out-dir", "--threads"):
            assert flag in text

    def test_console_script(self):
        exe = shutil.which("drmuc")
        cmd = [exe] if exe else [sys.executable, "-m", "drmuc.cli"]
        res = subprocess.run(cmd + ["--help"], capture_output=True, text=True, timeout=60)
        assert res.returncode == 0 and "sweep" in res.stdout


class TestErrors:
    def test_no_subcommand(self, capsys):
        code, _, err = run([], capsys)
        assert code == 2 and error_of(err) == (2, "usage")

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["ingest", "--data", tmp_path / "nope.csv", "--surcharge", 100, "--split-date",
                            "2023-01-02"], capsys)
        assert code == 2 and error_of(err) == (2, "missing-file")

    def test_missing_config(self, tmp_path, capsys):
        code, _, err = run(["synth", "--config", tmp_path / "none.json"], capsys)
        assert code == 2

    def test_malformed_data(self, tmp_path, capsys):
        f = tmp_path / "bad.csv"
        f.write_text("date,hour,load_kw,pv_kw,price_mwh\n2023-01-01,0,x,0,5\n")
        code, _, err = run(["ingest", "--data", f, "--surcharge", 0, "--split-date", "2023-01-02"], capsys)
        assert code == 3 and error_of(err) == (3, "schema")

    def test_surcharge_required(self, tmp_path, capsys):
        run(["synth", "--out-dir", tmp_path, "--days", 3, "--horizon", 4], capsys)
        code, _, err = run(["ingest", "--data", tmp_path / "synthetic.csv", "--split-date", "2023-01-02",
                            "--horizon", 4], capsys)
        assert code == 3 and "surcharge" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"solve": {"rhoo": 1}}))
        code, _, err = run(["solve", "--fixture", "--config", cfg, "--out-dir", tmp_path], capsys)
        assert code == 3 and "rhoo" in err

    def test_bad_instance_json(self, tmp_path, capsys):
        inst = tmp_path / "i.json"
        inst.write_text('{"horizon": 24, "tgrs": [{"id": "g"}]}')
        code, _, err = run(["solve", "--fixture", "--instance", inst, "--out-dir", tmp_path], capsys)
        assert code == 3

    def test_nonpositive_tolerance(self, tmp_path, capsys):
        code, _, _ = run(["solve", "--fixture", "--tol", 0, "--out-dir", tmp_path], capsys)
        assert code == 3

    def test_non_convergence(self, tmp_path, capsys):
        code, _, err = run(["solve", "--fixture", "--rho", 0.5, "--max-iter", 1, "--out-dir", tmp_path], capsys)
        assert code == 4 and error_of(err) == (4, "solver")
        doc = json.loads((tmp_path / "solution.json").read_text())
        assert doc["status"] == "max-iter"


class TestPipeline:
    def test_synth_is_seeded_and_idempotent(self, tmp_path, capsys):
        args = ["synth", "--days", 5, "--horizon", 6, "--seed", 3]
        for d in ("a", "b", "c"):
            seed = ["--seed", 4] if d == "c" else []
            assert run(args + seed + ["--out-dir", tmp_path / d], capsys)[0] == 0
        a, b, c = ((tmp_path / d / "synthetic.csv").read_bytes() for d in "abc")
        assert a == b and a != c

    def test_ingest_fixture(self, tmp_path, capsys):
        assert run(["ingest", "--fixture", "--out-dir", tmp_path], capsys)[0] == 0
        train = (tmp_path / "train.csv").read_text().splitlines()
        test = (tmp_path / "test.csv").read_text().splitlines()
        assert (len(train) - 1, len(test) - 1) == (60 * 24, 30 * 24)

    def test_cluster_elbow_on_fixture(self, tmp_path, capsys):
        for d in ("a", "b"):
            code, out, _ = run(["cluster", "--fixture", "--s-range", "1..12", "--out-dir", tmp_path / d], capsys)
            assert code == 0
        lines = [ln for ln in (tmp_path / "a" / "elbow.csv").read_text().splitlines() if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        assert [int(r["S"]) for r in rows] == list(range(1, 13))
        var = [float(r["variance_captured"]) for r in rows]
        assert all(b >= a - 1e-12 for a, b in zip(var, var[1:]))
        for name in ("elbow.csv", "scenarios.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        doc = json.loads((tmp_path / "a" / "scenarios.json").read_text())
        assert sum(s["probability"] for s in doc["scenarios"]) == pytest.approx(1.0, abs=1e-12)

    def test_cluster_explicit_s(self, tmp_path, capsys):
        assert run(["cluster", "--fixture", "--s", 2, "--out-dir", tmp_path], capsys)[0] == 0
        assert len(json.loads((tmp_path / "scenarios.json").read_text())["scenarios"]) == 2
        assert not (tmp_path / "elbow.csv").exists()

    def test_cluster_too_many_scenarios(self, tmp_path, capsys):
        assert run(["cluster", "--fixture", "--s", 500, "--out-dir", tmp_path], capsys)[0] == 3

    def test_solve_zero_rho_equals_benchmark(self, tmp_path, capsys):
        assert run(["solve", "--fixture", "--rho", 0, "--out-dir", tmp_path, "--output", "a.json"], capsys)[0] == 0
        assert run(["solve", "--fixture", "--benchmark-suc", "--out-dir", tmp_path, "--output", "b.json"],
                   capsys)[0] == 0
        a = json.loads((tmp_path / "a.json").read_text())
        b = json.loads((tmp_path / "b.json").read_text())
        assert a["objective"] == pytest.approx(b["objective"], rel=1e-6)

    def test_solve_idempotent_and_dump(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert run(["solve", "--fixture", "--rho", 0.4, "--out-dir", tmp_path / d, "--dump-lp",
                        tmp_path / d / "mp.txt"], capsys)[0] == 0
        docs = []
        for d in ("a", "b"):
            doc = json.loads((tmp_path / d / "solution.json").read_text())
            doc.pop("timing")
            docs.append(doc)
        assert docs[0] == docs[1]
        assert docs[0]["status"] == "converged" and docs[0]["ub"] - docs[0]["lb"] <= 1e-5
        dump = (tmp_path / "a" / "mp.txt").read_text()
        # one dump per master solve, including re-solves after a guard row is added
        assert dump.count("# master problem") >= docs[0]["iterations"]
        assert "zeta" in dump and (tmp_path / "a" / "mp.txt").read_bytes() == (tmp_path / "b" / "mp.txt").read_bytes()

    def test_config_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"out_dir": str(tmp_path), "rho": 5.0, "solve": {"rho": 0.3}}))
        assert run(["solve", "--fixture", "--config", cfg, "--output", "s.json"], capsys)[0] == 0
        assert json.loads((tmp_path / "s.json").read_text())["rho"] == 0.3
        assert run(["solve", "--fixture", "--config", cfg, "--rho", 0.1, "--output", "f.json"], capsys)[0] == 0
        assert json.loads((tmp_path / "f.json").read_text())["rho"] == 0.1


@pytest.fixture(scope="module")
def fixture_sweep(tmp_path_factory):
    base = tmp_path_factory.mktemp("sweep")
    for d in ("a", "b"):
        assert main(["sweep", "--fixture", "--out-dir", str(base / d)]) == 0
    return base


class TestSweepCommand:
    def test_seven_rows(self, fixture_sweep):
        rows = list(csv.DictReader((fixture_sweep / "a" / "sweep.csv").open()))
        assert [r["rho"] for r in rows] == ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0", "suc"]
        assert all(r["total_cost"] for r in rows)

    def test_idempotent_outputs(self, fixture_sweep):
        def strip_timing(path):
            return [line.rsplit(",", 1)[0] for line in path.read_text().splitlines()]

        a, b = fixture_sweep / "a", fixture_sweep / "b"
        assert strip_timing(a / "sweep.csv") == strip_timing(b / "sweep.csv")
        assert (a / "sweep.svg").read_bytes() == (b / "sweep.svg").read_bytes()

    def test_zero_radius_row_matches_suc(self, fixture_sweep):
        rows = {r["rho"]: r for r in csv.DictReader((fixture_sweep / "a" / "sweep.csv").open())}
        assert float(rows["0.0"]["total_cost"]) == pytest.approx(float(rows["suc"]["total_cost"]), rel=1e-9)
