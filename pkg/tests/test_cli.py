import csv
import json

import numpy as np
import pytest

from cohort_scr.cli import fmt, main, write_json
from cohort_scr.config import RunConfig, config_from_dict, load_config
from cohort_scr.errors import InputError
from cohort_scr.mortality import MortalityDataset, write_mortality_dataset

pytestmark = pytest.mark.filterwarnings("ignore:only .* samples expected:RuntimeWarning")

SMALL = {
    "cohort": {"size": 2000},
    "simulation": {"t": [1, 3], "n_scenarios": 1000, "seed": 42},
    "output": {"histogram_bins": 20},
}


def write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def run(tmp_path, *argv, raw=SMALL, out="out"):
    cfg = write_config(tmp_path, raw)
    return main([*argv, "--config", str(cfg), "--out", str(tmp_path / out)])


def read_summary(path):
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults_are_case_study(self):
        cfg = load_config(None)
        assert cfg.cohort.age == 50 and cfg.cohort.size == 10_000 and cfg.cohort.term == 10
        assert cfg.mortality.stress_factor == 1.2
        assert (cfg.market.r, cfg.market.i_gar, cfg.market.mean_growth) == (0.02, 0.01, 1.15)
        assert cfg.simulation.t == (1, 3, 5, 7)

    def test_round_trip(self):
        cfg = RunConfig().with_overrides(simulation={"seed": 9, "t": (2,)})
        assert config_from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("raw, match", [
        ({"cohort": {"agee": 50}}, "unknown keys"),
        ({"extras": {}}, "unknown config sections"),
        ({"simulation": {"t": [10]}}, "simulation.t"),
        ({"simulation": {"seed": -3}}, "seed"),
        ({"schema_version": 2}, "schema_version"),
        ({"cohort": {"premium_mode": "monthly"}}, "premium_mode"),
        ({"mortality": {"data_path": "missing.csv"}}, "not found"),
        ({"cohort": []}, "must be an object"),
    ])
    def test_rejects(self, tmp_path, raw, match):
        with pytest.raises(InputError, match=match):
            config_from_dict(raw, tmp_path)

    def test_relative_paths_resolve_against_config(self, tmp_path):
        (tmp_path / "sub").mkdir()
        (tmp_path / "sub" / "sums.csv").write_text("sum\n1\n2\n", encoding="utf-8")
        cfg = load_config(write_config(tmp_path / "sub", {"cohort": {"sums_file": "sums.csv"}}))
        assert cfg.cohort.sums_file == str(tmp_path / "sub" / "sums.csv")

    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n "cohort": \n}', encoding="utf-8")
        with pytest.raises(InputError, match=":3:"):
            load_config(path)


class TestOutput:
    def test_json_nan_is_null(self, tmp_path):
        write_json(tmp_path / "x.json", {"b": float("nan"), "a": np.float64(1.5), "c": np.arange(2)})
        assert (tmp_path / "x.json").read_text() == '{\n  "a": 1.5,\n  "b": null,\n  "c": [\n    0,\n    1\n  ]\n}\n'

    @pytest.mark.parametrize("value, text", [(0.1, "0.10000000000000001"), (3, "3"), (None, ""),
                                             (float("nan"), ""), (np.int64(7), "7")])
    def test_fmt(self, value, text):
        assert fmt(value) == text


class TestExitCodes:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["scr", "--config", str(tmp_path / "nope.json")]) == 2
        assert "nope.json" in capsys.readouterr().err

    def test_missing_data_file(self, tmp_path, capsys):
        raw = {"mortality": {"data_path": "absent.csv"}}
        assert run(tmp_path, "fit", raw=raw) == 2
        assert "absent.csv" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path):
        assert run(tmp_path, "price", raw={"market": {"rate": 0.02}}) == 2

    def test_bad_seed_override(self, tmp_path):
        assert run(tmp_path, "scr", "--seed", "-1") == 2

    def test_malformed_data_names_line(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("Year,Age,mx\n2000,50,0.01\n2000,x,0.02\n", encoding="utf-8")
        assert run(tmp_path, "fit", raw={"mortality": {"data_path": "m.csv"}}) == 2
        assert "m.csv:3" in capsys.readouterr().err

    def test_oracle_passes(self, capsys):
        assert main(["oracle"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)


class TestFit:
    def test_noiseless_explained_variance(self, tmp_path, capsys):
        years, ages = np.arange(1960, 2000), np.arange(40, 71)
        b = np.full(ages.size, 1.0 / ages.size)
        k = np.linspace(20.0, -20.0, years.size)
        a = -9.0 + 0.09 * (ages - 40)
        rates = np.exp(a[:, None] + np.outer(b, k))
        write_mortality_dataset(MortalityDataset(years, ages, rates), tmp_path / "lc.csv")
        raw = {"mortality": {"data_path": "lc.csv"}, "cohort": {"age": 50}}
        assert run(tmp_path, "fit", raw=raw) == 0
        payload = json.loads((tmp_path / "out" / "lee_carter.json").read_text())
        assert payload["diagnostics"]["explained_variance"] == pytest.approx(1.0, abs=1e-9)
        assert sum(payload["params"]["b"]) == pytest.approx(1.0, abs=1e-12)
        assert "explained variance" in capsys.readouterr().out


class TestPrice:
    def test_fractions_and_verify(self, tmp_path):
        assert run(tmp_path, "price", "--verify") == 0
        payload = json.loads((tmp_path / "out" / "price.json").read_text())
        assert sum(payload["hedging_portfolio"]["put_fractions"]) == pytest.approx(1.0, abs=1e-12)
        assert payload["verify"]["match"] and payload["verify"]["relative_error"] <= 1e-10
        assert payload["config"]["cohort"]["size"] == 2000


class TestScr:
    def test_byte_identical_reruns(self, tmp_path):
        assert run(tmp_path, "scr", out="a") == 0
        assert run(tmp_path, "scr", out="b") == 0
        for name in ("scr_report.json", "summary.csv", "histogram_idios_t1.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert (tmp_path / "a" / "run.log").exists()

    def test_both_risks_rows(self, tmp_path):
        raw = {**SMALL, "simulation": {"t": [1, 3, 5, 7], "n_scenarios": 500, "seed": 1}}
        assert run(tmp_path, "scr", "--risk", "both", raw=raw) == 0
        rows = read_summary(tmp_path / "out" / "summary.csv")
        assert len(rows) == 8
        assert [r["risk"] for r in rows] == ["idios"] * 4 + ["trend"] * 4
        assert rows[4]["closed_form_sd"] == "" and rows[0]["closed_form_sd"] != ""

    def test_deterministic_eta_matches_closed_form(self, tmp_path):
        raw = {"simulation": {"t": [1], "n_scenarios": 200_000, "seed": 5}, "output": {"histogram_bins": 0}}
        assert run(tmp_path, "scr", "--eta", "deterministic", raw=raw) == 0
        row = read_summary(tmp_path / "out" / "summary.csv")[0]
        assert float(row["sd"]) == pytest.approx(float(row["closed_form_sd"]), rel=0.01)

    def test_seed_flag_changes_output(self, tmp_path):
        assert run(tmp_path, "scr", out="a") == 0
        assert run(tmp_path, "scr", "--seed", "43", out="b") == 0
        assert (tmp_path / "a" / "summary.csv").read_bytes() != (tmp_path / "b" / "summary.csv").read_bytes()

    @pytest.mark.parametrize("kind, suffix", [("binary", "f64"), ("csv", "csv")])
    def test_samples_written(self, tmp_path, kind, suffix):
        raw = {**SMALL, "simulation": {"t": [1], "n_scenarios": 300, "seed": 2},
               "output": {"samples": kind, "histogram_bins": 0}}
        assert run(tmp_path, "scr", raw=raw) == 0
        path = tmp_path / "out" / f"samples_idios_t1.{suffix}"
        if kind == "binary":
            samples = np.fromfile(path, dtype="<f8")
        else:
            samples = np.loadtxt(path, skiprows=1)
        report = json.loads((tmp_path / "out" / "scr_report.json").read_text())["reports"][0]
        assert samples.size == 300
        assert np.mean(samples) == pytest.approx(report["mean"], rel=1e-12, abs=1e-9)
        assert not (tmp_path / "out" / "histogram_idios_t1.csv").exists()
