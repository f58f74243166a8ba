import csv
import json

import pytest

from cli import build_parser, parse_hurst, run
from errors import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, InvalidInputError

COUPLED = "[[0.75, 0.2], [0.0, 0.6]]"


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


# ═══ parsing ═══

def test_parse_hurst_inline_and_file(tmp_path):
    assert parse_hurst("0.75").d == 1
    source = tmp_path / "D.json"
    source.write_text(COUPLED)
    assert parse_hurst(f"@{source}").d == 2
    with pytest.raises(InvalidInputError):
        parse_hurst("[[0.75,")
    with pytest.raises(InvalidInputError):
        parse_hurst(f"@{tmp_path / 'missing.json'}")


def test_config_defaults_feed_parser():
    args = build_parser({"n": 64}).parse_args(["verify", "--D", "0.75"])
    assert args.n == 64
    assert args.c == 0.5


def test_unknown_subcommand_is_usage_error():
    assert run(["frobnicate"]) == EXIT_USAGE


def test_missing_required_flag_is_usage_error():
    assert run(["simulate", "--D", "0.75"]) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert run(["--help"]) == EXIT_OK


# ═══ subcommands ═══

def test_simulate_is_reproducible(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["simulate", "--D", COUPLED, "--n", "64", "--paths", "3", "--seed", "7"]
    assert run(argv + ["--out", str(first)]) == EXIT_OK
    assert run(argv + ["--out", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()

    rows = _read_csv(first)
    assert rows[0] == ["path", "m", "t", "x_1", "x_2"]
    assert len(rows) == 1 + 3 * 65
    assert rows[1][:3] == ["0", "0", "0"]


def test_simulate_json(tmp_path):
    out = tmp_path / "paths.json"
    assert run(["simulate", "--D", "0.75", "--n", "8", "--format", "json", "--out", str(out)]) == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["plan"]["n"] == 8
    assert len(payload["paths"][0]["values"]) == 9


def test_simulate_writes_weight_table(tmp_path):
    weights = tmp_path / "w.csv"
    code = run(["simulate", "--D", COUPLED, "--n", "4", "--out", str(tmp_path / "p.csv"),
                "--weights", str(weights)])
    assert code == EXIT_OK
    rows = _read_csv(weights)
    assert rows[0] == ["k", "row", "col", "value"]
    assert len(rows) == 1 + 4 * 4


def test_mds_check_writes_increments(tmp_path):
    increments = tmp_path / "inc.csv"
    code = run(["mds-check", "--n", "16", "--d", "2", "--epsilon", "0.5",
                "--out", str(tmp_path / "r.json"), "--increments", str(increments)])
    assert code == EXIT_OK
    rows = _read_csv(increments)
    assert rows[0] == ["i", "k", "value"]
    assert {abs(float(r[2])) for r in rows[1:]} == {0.25}


def test_covariance_table(tmp_path):
    out = tmp_path / "cov.csv"
    assert run(["covariance", "--D", "0.75", "--grid", "0.5,1.0", "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out)
    assert rows[0] == ["t", "s", "row", "col", "value"]
    last = rows[-1]
    assert last[:4] == ["1", "1", "0", "0"]
    assert float(last[4]) == pytest.approx(0.666666667, abs=1e-8)


def test_invalid_operator_is_validation_error(tmp_path):
    out = tmp_path / "cov.csv"
    assert run(["covariance", "--D", "[[0.4, 0], [0, 0.8]]", "--out", str(out)]) == EXIT_VALIDATION
    assert not out.exists()


def test_verify_self_similarity(tmp_path):
    out = tmp_path / "report.json"
    code = run(["verify", "--D", COUPLED, "--check", "self-similarity", "--c", "0.5", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["name"] == "self-similarity"
    assert report["pass"] is True


def test_verify_lemma6_writes_curves(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"verify": {"n_ladder": [64, 128, 256]}}))
    out, curves = tmp_path / "report.json", tmp_path / "curves.csv"
    code = run(["verify", "--D", "0.75", "--check", "lemma6", "--config", str(config),
                "--out", str(out), "--curves", str(curves)])
    assert code == EXIT_OK
    rows = _read_csv(curves)
    assert rows[0] == ["check", "series", "n", "error"]
    assert len(rows) == 1 + 3 * 3


def test_tight_slope_window_fails_tightness(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"verify": {"tolerances": {"slope_below": 1e-6, "slope_above": 1e-6}}}))
    out = tmp_path / "report.json"
    code = run(["verify", "--D", "0.75", "--check", "tightness", "--n", "256",
                "--config", str(config), "--out", str(out)])
    assert code == EXIT_CHECK_FAILED
    assert json.loads(out.read_text())["pass"] is False


def test_simulate_driven_entirely_by_config(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"D": "0.75", "n": 8}))
    out = tmp_path / "paths.csv"
    assert run(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out)
    assert rows[0] == ["path", "m", "t", "x_1"]
    assert len(rows) == 1 + 9


def test_config_matrix_operator_and_flag_override(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"D": [[0.75, 0.2], [0.0, 0.6]], "n": "4"}))
    out = tmp_path / "paths.csv"
    assert run(["simulate", "--config", str(config), "--n", "6", "--out", str(out)]) == EXIT_OK
    rows = _read_csv(out)
    assert rows[0][-2:] == ["x_1", "x_2"]
    assert len(rows) == 1 + 7


def test_flat_config_n_is_coerced_for_bench(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"D": "0.75", "n": 8}))
    out = tmp_path / "bench.json"
    code = run(["bench", "--config", str(config), "--repeats", "1", "--format", "json", "--out", str(out)])
    assert code == EXIT_OK
    assert [row["n"] for row in json.loads(out.read_text())] == [8]


def test_per_command_config_sections():
    defaults = {"D": "0.75", "n": 8, "commands": {"bench": {"n": "16,32"}, "verify": {"c": 0.25}}}
    parser = build_parser(defaults)
    assert parser.parse_args(["bench"]).n == [16, 32]
    assert parser.parse_args(["simulate"]).n == 8
    assert parser.parse_args(["verify"]).c == 0.25
    # keys a subcommand does not define are left out
    assert not hasattr(parser.parse_args(["mds-check"]), "D")


def test_config_without_operator_is_usage_error(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"n": 8}))
    assert run(["simulate", "--config", str(config), "--out", str(tmp_path / "p.csv")]) == EXIT_USAGE


def test_bad_config_file_is_validation_error(tmp_path):
    config = tmp_path / "config.json"
    config.write_text("[1, 2]")
    assert run(["verify", "--D", "0.75", "--config", str(config)]) == EXIT_VALIDATION


def test_mds_check_passes_and_spike_fails(tmp_path):
    out = tmp_path / "mds.json"
    assert run(["mds-check", "--n", "1024", "--d", "2", "--generator", "predictable-sign",
                "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["flags"]["bounded"] is True

    code = run(["mds-check", "--n", "256", "--generator", "violating-spike", "--out", str(out)])
    assert code == EXIT_CHECK_FAILED
    report = json.loads(out.read_text())
    assert report["flags"]["bounded"] is False
    assert report["max_abs_scaled"] == pytest.approx(2.0)


def test_bench_json(tmp_path):
    out = tmp_path / "bench.json"
    code = run(["bench", "--D", "0.75", "--n", "32,64", "--repeats", "1", "--format", "json",
                "--out", str(out)])
    assert code == EXIT_OK
    rows = json.loads(out.read_text())
    assert [row["n"] for row in rows] == [32, 64]
    assert all(row["max_abs_difference"] <= 1e-9 for row in rows)
