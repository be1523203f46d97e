import os
import subprocess
import sys

import pytest

from rns_analog import cli
from rns_analog.config import ENV_VAR, DEFAULTS, apply_override, load_config
from rns_analog.errors import ConfigError

SUBCOMMANDS = ["convert", "dotprod-error", "accuracy", "rrns-perr", "energy", "infer"]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def read_csv(path):
    return path.read_text().splitlines()


class TestConvert:
    def test_example(self, capsys):
        code, out, _ = run(["convert", "23", "--moduli", "3,5,7"], capsys)
        assert code == 0
        assert out.strip() == "residues: 2,3,2; reconstructed: 23"

    def test_zero(self, capsys):
        _, out, _ = run(["convert", "0", "--moduli", "3,5,7"], capsys)
        assert out.startswith("residues: 0,0,0;")

    def test_negative(self, capsys):
        _, out, _ = run(["convert", "-1", "--moduli", "3,5,7"], capsys)
        assert out.strip() == "residues: 2,4,6; reconstructed: -1"

    def test_not_coprime(self, capsys):
        code, _, err = run(["convert", "23", "--moduli", "4,6"], capsys)
        assert code == 2
        assert "moduli 4 and 6 share factor 2" in err

    def test_out_of_range(self, capsys):
        code, _, err = run(["convert", "105", "--moduli", "3,5,7"], capsys)
        assert code == 2 and "range" in err

    def test_needs_moduli(self, capsys):
        assert run(["convert", "1"], capsys)[0] == 2


class TestEnergy:
    def test_preset_summary(self, tmp_path, capsys):
        out_csv = tmp_path / "e.csv"
        code, out, _ = run(["energy", "--preset", "rns4", "--h", "128", "--out", str(out_csv)], capsys)
        assert code == 0
        ratio = float(out.split("=")[-1])
        assert ratio == pytest.approx(168, rel=0.01)
        lines = read_csv(out_csv)
        assert lines[0] == "b,mode,n,b_adc_effective,dac_J,adc_J,ratio"
        assert len(lines) == 3
        assert (tmp_path / "e.config.yaml").exists()

    def test_flag_beats_override_beats_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("energy:\n  h: 16\n  b: [4]\n")
        out_csv = tmp_path / "e.csv"
        run(["energy", "--config", str(cfg), "--out", str(out_csv)], capsys)
        fixed_16 = read_csv(out_csv)[2]
        run(["energy", "--config", str(cfg), "--set", "energy.h=128", "--out", str(out_csv)], capsys)
        fixed_128 = read_csv(out_csv)[2]
        run(["energy", "--config", str(cfg), "--set", "energy.h=128", "--h", "16", "--out", str(out_csv)], capsys)
        assert read_csv(out_csv)[2] == fixed_16 != fixed_128

    def test_env_config(self, tmp_path, capsys, monkeypatch):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("energy:\n  b: [5, 6]\n")
        monkeypatch.setenv(ENV_VAR, str(cfg))
        out_csv = tmp_path / "e.csv"
        run(["energy", "--out", str(out_csv)], capsys)
        assert len(read_csv(out_csv)) == 5


class TestConfigErrors:
    def test_unknown_key_in_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("energy:\n  hh: 3\n")
        code, _, err = run(["energy", "--config", str(cfg), "--out", str(tmp_path / "e.csv")], capsys)
        assert code == 2 and "energy.hh" in err

    def test_unknown_override(self, tmp_path, capsys):
        code, _, err = run(["energy", "--set", "nope=1", "--out", str(tmp_path / "e.csv")], capsys)
        assert code == 2 and "nope" in err

    def test_missing_config_file_is_io_error(self, tmp_path, capsys):
        code, _, _ = run(["energy", "--config", str(tmp_path / "missing.yaml")], capsys)
        assert code == 3

    def test_bad_jobs(self, tmp_path, capsys):
        assert run(["energy", "--jobs", "0", "--out", str(tmp_path / "e.csv")], capsys)[0] == 2

    def test_load_and_override(self):
        cfg = load_config(None) if not os.environ.get(ENV_VAR) else DEFAULTS
        cfg = apply_override(cfg, "rrns_perr.p=[0.2]")
        assert cfg["rrns_perr"]["p"] == [0.2]
        with pytest.raises(ConfigError):
            apply_override(cfg, "rrns_perr.p")
        with pytest.raises(ConfigError):
            apply_override(cfg, "energy=3")


class TestRrnsPerr:
    def test_p_zero_gives_zero_error(self, tmp_path, capsys):
        out_csv = tmp_path / "r.csv"
        code, _, _ = run(["rrns-perr", "--p", "0", "--R", "1,3", "--trials", "2000", "--out", str(out_csv)], capsys)
        assert code == 0
        lines = read_csv(out_csv)
        header = lines[0].split(",")
        assert header == list(cli.RRNS_COLUMNS)
        for line in lines[1:]:
            row = dict(zip(header, line.split(",")))
            assert float(row["p_err_analytic"]) == 0.0 and float(row["p_err_empirical"]) == 0.0

    def test_invalid_code_is_config_error(self, tmp_path, capsys):
        code, _, err = run(["rrns-perr", "--non-redundant", "15,14", "--redundant", "13,11",
                            "--trials", "100", "--out", str(tmp_path / "r.csv")], capsys)
        assert code == 2 and "redundant" in err


class TestDeterminism:
    @pytest.mark.parametrize("argv", [
        ["dotprod-error", "--b", "4..6", "--trials", "500"],
        ["accuracy", "--h", "16,64", "--seeds", "0,1"],
        ["rrns-perr", "--p", "0.05,0.1", "--R", "1,2", "--trials", "9000"],
        ["energy"],
        ["infer", "--mode", "rns", "--b", "6", "--p", "0.01"],
    ], ids=lambda a: a[0])
    def test_byte_identical_across_jobs(self, argv, tmp_path, capsys):
        outs = []
        for i, jobs in enumerate(("1", "1", "3")):
            out_csv = tmp_path / f"run{i}.csv"
            assert run([*argv, "--jobs", jobs, "--out", str(out_csv)], capsys)[0] == 0
            outs.append(sorted(p.name.replace(f"run{i}", "run") for p in tmp_path.glob(f"run{i}*")))
            outs.append([p.read_bytes() for p in sorted(tmp_path.glob(f"run{i}*"))])
        assert outs[0] == outs[2] == outs[4]
        assert outs[1] == outs[3] == outs[5]


class TestInfer:
    def test_accuracy_line(self, tmp_path, capsys):
        code, out, _ = run(["infer", "--mode", "rns", "--b", "6", "--out", str(tmp_path / "p.csv")], capsys)
        assert code == 0 and "accuracy" in out
        assert len(read_csv(tmp_path / "p.csv")) == 900

    def test_explicit_moduli_too_small(self, tmp_path, capsys):
        code, _, err = run(["infer", "--moduli", "3,5,7", "--out", str(tmp_path / "p.csv")], capsys)
        assert code == 2


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_lists_every_flag(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([sub, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    parser = cli.build_parser()
    sp = parser._subparsers._group_actions[0].choices[sub]
    for action in sp._actions:
        assert action.help, f"{sub}: {action.dest} has no help"
        for opt in action.option_strings:
            assert opt in text


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "rns_analog.cli", "convert", "23", "--moduli", "3,5,7"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "reconstructed: 23" in res.stdout
