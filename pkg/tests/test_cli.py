import csv
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from nzdetect import __version__
from nzdetect.cli import build_parser, main, read_complex_vector, run
from nzdetect.cube import load_cube

ERROR_LINE = re.compile(r"^nzdetect: error: code=(\d) type=(\w+): \S.*$")
SUBCOMMANDS = ["simulate-fa", "simulate-pd", "threshold", "detect", "complexify", "qqplot", "gen-cube"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("NZDETECT_WORKERS", raising=False)
    return tmp_path


def error_of(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    m = ERROR_LINE.match(lines[0])
    assert m, lines[0]
    return int(m.group(1)), m.group(2)


def write_steering(path, m):
    path.write_text("re,im\n" + "".join("1,0\n" for _ in range(m)))
    return str(path)


class TestHelp:
    @pytest.mark.parametrize("command", SUBCOMMANDS)
    def test_every_flag_has_default_or_required(self, command):
        sub = build_parser()._subparsers._group_actions[0].choices[command]
        for action in sub._actions:
            if "-h" in action.option_strings:
                continue
            text = action.help or ""
            assert "default" in text or action.required, (command, action.option_strings)

    @pytest.mark.parametrize("command", SUBCOMMANDS)
    def test_help_exits_zero(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            run([command, "--help"])
        assert exc.value.code == 0
        assert "--out" in capsys.readouterr().out

    def test_units_documented(self):
        sub = build_parser()._subparsers._group_actions[0].choices
        assert "dB" in sub["simulate-pd"].format_help()
        assert "pixels" in sub["detect"].format_help()
        assert "count" in sub["simulate-fa"].format_help()


class TestThreshold:
    def test_kelly_known_example(self, workdir, capsys):
        assert run(["threshold", "--detector", "kelly-known", "--m", "5", "--N", "10", "--pfa", "0.015625"]) == 0
        out = capsys.readouterr().out.strip()
        assert "lambda=0.5 " in out + " "
        fields = dict(f.split("=") for f in out.split())
        assert float(fields["lambda"]) == pytest.approx(0.5, abs=1e-12)
        assert float(fields["eta"]) == pytest.approx(2.0 ** 11, rel=1e-10)
        manifest = json.loads((workdir / "nzdetect-threshold.manifest.json").read_text())
        assert manifest["version"] == __version__ and manifest["command"] == "threshold"
        assert json.loads((workdir / "nzdetect-threshold.json").read_text())["lambda"] == pytest.approx(0.5)

    def test_amf_has_no_eta(self, workdir, capsys):
        assert run(["threshold", "--detector", "amf", "--m", "5", "--N", "10", "--pfa", "1e-3", "--out", "t"]) == 0
        assert "eta=" not in capsys.readouterr().out

    def test_mf_without_n(self, workdir, capsys):
        assert run(["threshold", "--detector", "mf", "--m", "3", "--pfa", "0.1", "--out", "t"]) == 0
        assert "N=NA" in capsys.readouterr().out

    def test_missing_n_is_usage(self, workdir, capsys):
        assert run(["threshold", "--detector", "amf", "--m", "5", "--pfa", "1e-3"]) == 1
        assert error_of(capsys) == (1, "UsageError")

    def test_generalized_ci(self, workdir, capsys):
        assert run(["threshold", "--detector", "kelly-generalized", "--m", "3", "--N", "6", "--pfa", "0.01",
                    "--trials", "20000", "--out", "g"]) == 0
        fields = dict(f.split("=") for f in capsys.readouterr().out.split())
        assert float(fields["ci_lo"]) <= float(fields["lambda"]) <= float(fields["ci_hi"])


class TestExitCodes:
    def test_bad_choice(self, workdir, capsys):
        assert run(["threshold", "--detector", "nope", "--m", "5", "--pfa", "0.1"]) == 1
        assert error_of(capsys)[0] == 1

    def test_no_command(self, workdir, capsys):
        assert run([]) == 1
        error_of(capsys)

    def test_domain(self, workdir, capsys):
        assert run(["threshold", "--detector", "amf", "--m", "5", "--N", "10", "--pfa", "2"]) == 2
        assert error_of(capsys)[0] == 2

    def test_domain_config(self, workdir, capsys):
        assert run(["simulate-fa", "--rho", "1.5", "--trials", "10"]) == 2
        assert error_of(capsys)[0] == 2

    def test_insufficient_trials(self, workdir, capsys):
        assert run(["threshold", "--detector", "kelly-generalized", "--m", "3", "--N", "6", "--pfa", "1e-3",
                    "--trials", "100"]) == 2
        code, name = error_of(capsys)
        assert name == "InsufficientTrialsError"

    def test_missing_cube(self, workdir, capsys):
        assert run(["complexify", "--cube", "missing.jcube"]) == 3
        assert error_of(capsys)[0] == 3

    def test_corrupt_cube(self, workdir, capsys):
        (workdir / "bad.jcube").write_bytes(b"garbage\n")
        assert run(["qqplot", "--cube", "bad.jcube"]) == 3
        assert error_of(capsys) == (3, "CubeFormatError")

    def test_bad_config_file(self, workdir, capsys):
        (workdir / "c.json").write_text("{not json")
        assert run(["simulate-fa", "--config", "c.json"]) == 3
        error_of(capsys)

    def test_bad_env_workers(self, workdir, capsys, monkeypatch):
        monkeypatch.setenv("NZDETECT_WORKERS", "zero")
        assert run(["gen-cube", "--out", "c"]) == 1
        error_of(capsys)

    def test_main_entry(self, workdir):
        assert main(["gen-cube", "--width", "5", "--height", "5", "--out", "c"]) == 0

    def test_module_entry(self, workdir):
        proc = subprocess.run([sys.executable, "-m", "nzdetect", "threshold", "--detector", "nmf", "--m", "4",
                               "--pfa", "0.5", "--out", "n"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("detector=nmf")


class TestSimulate:
    def test_fa(self, workdir):
        (workdir / "cfg.json").write_text(json.dumps({"m": 3, "N": 6, "trials": 3000, "seed": 4}))
        assert run(["simulate-fa", "--config", "cfg.json", "--detector", "anmf", "--thresholds", "0,0.2,0.5",
                    "--out", "fa"]) == 0
        rows = list(csv.DictReader(open(workdir / "fa.csv")))
        assert [float(r["threshold"]) for r in rows] == [0, 0.2, 0.5]
        doc = json.loads((workdir / "fa.json").read_text())
        assert doc["config"]["detector"] == "anmf" and doc["config"]["m"] == 3
        manifest = json.loads((workdir / "fa.manifest.json").read_text())
        assert manifest["seed"] == 4 and manifest["config"]["trials"] == 3000
        assert sorted(manifest["outputs"]) == ["fa.csv", "fa.json"]

    def test_pd(self, workdir):
        assert run(["simulate-pd", "--m", "3", "--N", "6", "--trials", "2000", "--pfa", "0.01",
                    "--snr", "0,10", "--out", "pd"]) == 0
        rows = list(csv.DictReader(open(workdir / "pd.csv")))
        assert len(rows) == 2 and float(rows[1]["empirical"]) > float(rows[0]["empirical"])

    def test_steering_file(self, workdir):
        write_steering(workdir / "s.csv", 3)
        assert run(["simulate-fa", "--m", "3", "--N", "6", "--trials", "500", "--steering", "s.csv",
                    "--out", "fa"]) == 0

    def test_steering_length_mismatch(self, workdir, capsys):
        write_steering(workdir / "s.csv", 4)
        assert run(["simulate-fa", "--m", "3", "--N", "6", "--trials", "500", "--steering", "s.csv"]) == 2
        error_of(capsys)


class TestCubeCommands:
    def test_gen_detect_pipeline(self, workdir):
        assert run(["gen-cube", "--out", "c"]) == 0
        cube = load_cube(workdir / "c.jcube")
        assert (cube.bands, cube.height, cube.width) == (6, 20, 60) and cube.is_complex
        write_steering(workdir / "s.csv", 6)
        assert run(["detect", "--cube", "c.jcube", "--detector", "anmf", "--steering", "s.csv", "--thin", "5",
                    "--out", "d"]) == 0
        for ext in (".map.csv", ".map.jcube", ".curve.csv", ".curve.json", ".manifest.json"):
            assert (workdir / ("d" + ext)).exists()
        curve = json.loads((workdir / "d.curve.json").read_text())
        assert curve["trials"] == 48

    def test_detect_default_prefix(self, workdir):
        run(["gen-cube", "--width", "12", "--height", "12", "--out", "c"])
        write_steering(workdir / "s.csv", 6)
        assert run(["detect", "--cube", "c.jcube", "--detector", "anmf", "--steering", "s.csv", "--window", "5"]) == 0
        assert (workdir / "nzdetect-detect.map.csv").exists()

    def test_complexify_and_qq(self, workdir):
        assert run(["gen-cube", "--bands", "20", "--dtype", "f32", "--width", "10", "--height", "8",
                    "--out", "r"]) == 0
        assert run(["complexify", "--cube", "r.jcube", "--out", "z"]) == 0
        z = load_cube(workdir / "z.jcube")
        assert z.bands == 6 and z.is_complex
        r = load_cube(workdir / "r.jcube")
        np.testing.assert_allclose(z.values.real, r.values[0:12:2], rtol=1e-5, atol=1e-5)
        assert run(["qqplot", "--cube", "r.jcube", "--band", "3", "--region", "0,0,4,5", "--out", "q"]) == 0
        info = json.loads((workdir / "q.json").read_text())
        assert info["count"] == 20 and not info["degenerate"]
        assert (workdir / "q.csv").read_text().startswith("normal_quantile,sample_quantile\n")

    def test_complexify_complex_input(self, workdir, capsys):
        run(["gen-cube", "--width", "4", "--height", "4", "--out", "c"])
        assert run(["complexify", "--cube", "c.jcube"]) == 2
        error_of(capsys)

    def test_bad_region(self, workdir, capsys):
        run(["gen-cube", "--dtype", "f32", "--width", "4", "--height", "4", "--out", "r"])
        assert run(["qqplot", "--cube", "r.jcube", "--region", "1,2"]) == 1
        error_of(capsys)


class TestReadVector:
    def test_formats(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("# steering\nre,im\n1,2\n0.5\n-1, 0\n")
        assert read_complex_vector(p) == [1 + 2j, 0.5, -1]

    @pytest.mark.parametrize("text", ["", "1,2,3\n", "1\nfoo\n"])
    def test_bad(self, tmp_path, text):
        p = tmp_path / "v.csv"
        p.write_text(text)
        with pytest.raises(OSError):
            read_complex_vector(p)


class TestDeterminism:
    def test_rerun_identical_across_workers(self, workdir):
        args = ["simulate-fa", "--trials", "5000", "--block-size", "1000", "--detector", "kelly-plugin"]
        assert run(args + ["--out", "a", "--workers", "1"]) == 0
        assert run(args + ["--out", "b", "--workers", "3"]) == 0
        for ext in (".csv", ".json"):
            assert (workdir / ("a" + ext)).read_bytes() == (workdir / ("b" + ext)).read_bytes()
