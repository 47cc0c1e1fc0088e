"""Config parsing, invariant reporting, CLI contract and determinism."""

import copy
import json
import os
from pathlib import Path

import numpy as np
import pytest

from inertsim import cli
from inertsim.config import parse_config
from inertsim.errors import ValidationError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def load_config_dict(name):
    return json.loads((CONFIG_DIR / f"{name}.json").read_text())


def data_files(out_dir):
    """CSV artifacts of a run (the manifest carries wall time, so byte
    comparisons cover the data files only)."""
    return sorted(p for p in Path(out_dir).iterdir() if p.suffix == ".csv")


def read_all(out_dir):
    return {p.name: p.read_bytes() for p in data_files(out_dir)}


class TestParsing:
    def test_syntax_error_is_line_anchored(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "kind": "fbm",\n  "oops"\n}\n')
        with pytest.raises(ValidationError, match=r"line 4, column 1"):
            parse_config(bad)

    def test_missing_kind(self):
        with pytest.raises(ValidationError, match="'kind'"):
            parse_config({"master_seed": 1})

    def test_unknown_kind(self):
        with pytest.raises(ValidationError, match="one of"):
            parse_config({"kind": "levy", "master_seed": 1})

    def test_missing_required_section(self):
        with pytest.raises(ValidationError, match="'fbm'"):
            parse_config({"kind": "fbm", "master_seed": 1})

    def test_seed_must_be_explicit(self):
        with pytest.raises(ValidationError, match="master_seed"):
            parse_config({"kind": "fbm", "fbm": {"hurst": 0.5, "n_grid": 8}})

    def test_nested_path_in_error(self):
        cfg = parse_config({"kind": "fbm", "master_seed": 1,
                            "fbm": {"n_grid": 64}})
        results = dict((n, (ok, msg)) for n, ok, msg in cfg.check_invariants())
        ok, msg = results["fbm parameters (hurst in (0,1], n_grid >= 2)"]
        assert not ok and "fbm.hurst" in msg


class TestValidateInvariants:
    def test_shipped_configs_all_pass(self):
        for path in sorted(CONFIG_DIR.glob("*.json")):
            cfg = parse_config(path)
            failures = [(n, msg) for n, ok, msg in cfg.check_invariants() if not ok]
            assert not failures, f"{path.name}: {failures}"

    def test_alpha_out_of_range_is_named(self):
        raw = load_config_dict("hurst")
        raw["semi_markov"]["sojourn_laws"]["0"]["params"]["tail"] = 2.5
        cfg = parse_config(raw)
        failed = {n for n, ok, _ in cfg.check_invariants() if not ok}
        assert any("alpha in (1,2)" in n for n in failed)

    def test_degenerate_sensitivity_is_named(self):
        raw = load_config_dict("feedback")
        # uniform occupation law over (0, 1); f = (1, 1) is degenerate but
        # also not one-to-one, so use a 3-state spec with f(0) = mean f
        raw["semi_markov"] = {
            "states": [0, 1, 2],
            "embedded_matrix": [[1 / 3, 1 / 3, 1 / 3]] * 3,
            "sojourn_laws": {str(s): {"kind": "exponential", "params": {"rate": 1.0}}
                             for s in (0, 1, 2)},
        }
        raw["rates"]["f"] = {"0": 1.0, "1": 0.0, "2": 2.0}
        cfg = parse_config(raw)
        failed = {n for n, ok, _ in cfg.check_invariants() if not ok}
        assert any("non-degenerate" in n for n in failed)

    def test_row_sum_violation_is_named(self):
        raw = load_config_dict("feedback")
        raw["semi_markov"]["embedded_matrix"] = [[0.6, 0.5], [0.5, 0.5]]
        cfg = parse_config(raw)
        failed = {n for n, ok, _ in cfg.check_invariants() if not ok}
        assert any("row-stochastic" in n for n in failed)


class TestCliContract:
    def test_version(self, capsys):
        assert cli.main(["version"]) == 0
        assert "inertsim" in capsys.readouterr().out

    def test_validate_exit_codes(self, tmp_path, capsys):
        good = CONFIG_DIR / "fbm.json"
        assert cli.main(["validate", str(good)]) == 0
        bad = tmp_path / "bad.json"
        raw = load_config_dict("fbm")
        raw["fbm"]["hurst"] = 2.5
        bad.write_text(json.dumps(raw))
        assert cli.main(["validate", str(bad)]) == cli.EXIT_CONFIG
        out = capsys.readouterr().out
        assert "FAIL" in out and "hurst" in out

    def test_missing_file_is_config_error(self):
        assert cli.main(["run", "/nonexistent/config.json"]) == cli.EXIT_CONFIG

    def test_run_rejects_invalid_invariants(self, tmp_path):
        raw = load_config_dict("feedback")
        raw["semi_markov"]["embedded_matrix"] = [[0.6, 0.5], [0.5, 0.5]]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(raw))
        assert cli.main(["run", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG

    def test_fbm_run_row_contract(self, tmp_path):
        cfgfile = tmp_path / "fbm.json"
        raw = load_config_dict("fbm")
        cfgfile.write_text(json.dumps(raw))
        out = tmp_path / "out"
        assert cli.main(["run", str(cfgfile), "--out", str(out)]) == 0
        lines = (out / "path_0000.csv").read_text().splitlines()
        assert lines[0] == "time,value"
        assert lines[1] == "0,0"
        assert len(lines) - 1 == raw["fbm"]["n_grid"] + 1  # 16385 data rows

    def test_manifest_hash_matches_canonical_serialization(self, tmp_path):
        import hashlib
        cfgfile = tmp_path / "fbm.json"
        raw = load_config_dict("fbm")
        raw["fbm"]["n_grid"] = 64
        cfgfile.write_text(json.dumps(raw))
        out = tmp_path / "out"
        assert cli.main(["run", str(cfgfile), "--out", str(out)]) == 0
        manifests = list(out.glob("manifest*"))
        assert len(manifests) == 1
        manifest = json.loads(manifests[0].read_text())
        canon = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
        assert manifest["config_hash"] == hashlib.sha256(canon).hexdigest()

    def test_seed_override_changes_output_and_hash(self, tmp_path):
        cfgfile = tmp_path / "fbm.json"
        raw = load_config_dict("fbm")
        raw["fbm"]["n_grid"] = 64
        cfgfile.write_text(json.dumps(raw))
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", str(cfgfile), "--out", str(a)]) == 0
        assert cli.main(["run", str(cfgfile), "--out", str(b), "--seed", "999"]) == 0
        assert read_all(a) != read_all(b)
        ma = json.loads((a / "manifest.json").read_text())
        mb = json.loads((b / "manifest.json").read_text())
        assert ma["master_seed"] == raw["master_seed"]
        assert mb["master_seed"] == 999
        assert ma["config_hash"] != mb["config_hash"]

    def test_env_var_output_override(self, tmp_path, monkeypatch):
        cfgfile = tmp_path / "fbm.json"
        raw = load_config_dict("fbm")
        raw["fbm"]["n_grid"] = 32
        cfgfile.write_text(json.dumps(raw))
        target = tmp_path / "from_env"
        monkeypatch.setenv(cli.OUTPUT_ENV_VAR, str(target))
        assert cli.main(["run", str(cfgfile)]) == 0
        assert (target / "manifest.json").exists()


class TestDeterminism:
    def _small_feedback(self, tmp_path):
        raw = load_config_dict("feedback")
        raw["market"]["n_agents"] = 200
        raw["ensemble_size"] = 6
        cfgfile = tmp_path / "fb.json"
        cfgfile.write_text(json.dumps(raw))
        return cfgfile

    def test_reruns_are_byte_identical(self, tmp_path):
        cfgfile = self._small_feedback(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["run", str(cfgfile), "--out", str(a)]) == 0
        assert cli.main(["run", str(cfgfile), "--out", str(b)]) == 0
        assert read_all(a) == read_all(b)

    def test_thread_counts_do_not_change_bytes(self, tmp_path):
        cfgfile = self._small_feedback(tmp_path)
        outs = []
        for threads in (1, 4, 8):
            out = tmp_path / f"t{threads}"
            assert cli.main(["run", str(cfgfile), "--out", str(out),
                             "--threads", str(threads)]) == 0
            outs.append(read_all(out))
        assert outs[0] == outs[1] == outs[2]

    def test_summary_floats_round_trip(self, tmp_path):
        cfgfile = self._small_feedback(tmp_path)
        out = tmp_path / "o"
        assert cli.main(["run", str(cfgfile), "--out", str(out)]) == 0
        lines = (out / "summary.csv").read_text().splitlines()[1:]
        for line in lines[:50]:
            for tok in line.split(","):
                v = float(tok)
                assert repr(v) == tok


class TestRunners:
    def test_fluid_runner_writes_solution(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", str(CONFIG_DIR / "fluid.json"),
                         "--out", str(out)]) == 0
        header = (out / "fluid.csv").read_text().splitlines()[0]
        assert header == "time,s,lambda_bar,lambda_plus,lambda_minus,lambda_prime"

    def test_feedback_events_csv_columns(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", str(CONFIG_DIR / "feedback.json"),
                         "--out", str(out)]) == 0
        lines = (out / "events_0000.csv").read_text().splitlines()
        assert lines[0] == "event_index,time,log_price"
        first = lines[1].split(",")
        assert first[0] == "0" and float(first[1]) > 0.0

    def test_randcoeff_runner(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", str(CONFIG_DIR / "randcoeff.json"),
                         "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["log_contraction_rate"] < 0.0

    def test_fracvol_runner(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", str(CONFIG_DIR / "fracvol.json"),
                         "--out", str(out)]) == 0
        assert (out / "summary.csv").exists()

    def test_no_feedback_runner(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", str(CONFIG_DIR / "no_feedback.json"),
                         "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["alpha"] == 1.5
        # pi = (1/2, 1/2), mean sojourns (3, 1) -> nu = (3/4, 1/4), mu = 1/4
        assert manifest["mu"] == pytest.approx(0.25, abs=1e-9)

    def test_fou_runner(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", str(CONFIG_DIR / "fou.json"),
                         "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["hurst"] == 0.75
