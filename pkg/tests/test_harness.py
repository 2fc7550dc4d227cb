from __future__ import annotations

import json
from fractions import Fraction as F

import pytest

from gasketlab import harness
from gasketlab.harness import (
    ConfigError,
    ExperimentConfig,
    Outcome,
    canonical_json,
    jsonable,
    main,
    parse_args,
    run,
    threads,
    verify_hash,
)


def _report(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, out


def test_gasket_enumerate_level_three(capsys):
    code, out = _report(capsys, ["gasket", "enumerate", "--level", "3"])
    rep = json.loads(out)
    assert code == 0 and rep["results"]["total"] == 13
    assert rep["schema"] == harness.SCHEMA_VERSION and verify_hash(rep)
    assert all(rep["checks"].values())


def test_reports_are_deterministic(capsys):
    _, a = _report(capsys, ["gasket", "--level", "4", "--seed", "3"])
    _, b = _report(capsys, ["gasket", "--level", "4", "--seed", "3"])
    assert a == b


def test_tampered_report_fails_hash(capsys):
    _, out = _report(capsys, ["gasket", "--level", "2"])
    rep = json.loads(out)
    rep["results"]["total"] = 99
    assert not verify_hash(rep)


def test_rationals_serialize_as_pairs():
    assert jsonable(F(3, 4)) == {"num": 3, "den": 4}
    assert canonical_json({"b": 1, "a": F(1, 2)}) == canonical_json({"a": F(1, 2), "b": 1})


@pytest.mark.parametrize(
    "argv",
    [
        ["nosuch"],
        ["gasket", "explode"],
        ["gasket", "--format", "pdf"],
        ["gasket", "--level", "0"],
        ["witness", "--epsilon", "-1"],
        ["witness", "--epsilon", "abc"],
        ["phi", "--scale", "2"],
        ["phi", "eval"],
        ["gasket", "classify", "--point", "1"],
    ],
)
def test_config_errors_exit_two(argv, capsys):
    assert main(argv) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_format_is_config_error():
    with pytest.raises(ConfigError):
        run(parse_args(["phi", "eval", "--point", "1/3,1/3", "--format", "csv"]))


def test_failed_check_exits_one(monkeypatch, capsys):
    monkeypatch.setitem(harness.RUNNERS, "gasket", lambda cfg, t: Outcome({"x": 1}, {"good": True, "broken": False}))
    assert main(["gasket"]) == 1
    captured = capsys.readouterr()
    assert "broken" in captured.err
    assert json.loads(captured.out)["checks"]["broken"] is False


def test_csv_and_svg_formats(capsys):
    _, csv_text = _report(capsys, ["gasket", "--level", "2", "--format", "csv"])
    lines = csv_text.strip().splitlines()
    assert lines[0].startswith("address,level") and len(lines) == 1 + 4
    _, svg = _report(capsys, ["gasket", "--level", "2", "--format", "svg"])
    assert svg.startswith("<svg")


def test_classify_and_phi_eval(capsys):
    _, out = _report(capsys, ["gasket", "classify", "--level", "3", "--point", "1/3,1/3"])
    assert json.loads(out)["results"]["classify"]["point"] == [{"num": 1, "den": 3}] * 2
    code, out = _report(capsys, ["phi", "eval", "--level", "2", "--point", "1/3,1/3"])
    assert code == 0 and "image" in json.dumps(json.loads(out)["results"])


def test_witness_round_trip(tmp_path, capsys):
    path = tmp_path / "w.json"
    assert main(["witness", "build", "--level", "4", "--out", str(path)]) == 0
    assert main(["witness", "verify", "--level", "4", "--input", str(path)]) == 0
    rep = json.loads(path.read_text())
    rep["results"]["witness"] = {"tampered": True}
    path.write_text(json.dumps(rep))
    assert main(["witness", "verify", "--level", "4", "--input", str(path)]) != 0
    capsys.readouterr()


def test_thread_variable(monkeypatch):
    monkeypatch.delenv("GASKETLAB_THREADS", raising=False)
    assert threads() == 1
    monkeypatch.setenv("GASKETLAB_THREADS", "3")
    assert threads() == 3
    for bad in ("0", "many"):
        monkeypatch.setenv("GASKETLAB_THREADS", bad)
        with pytest.raises(ConfigError):
            threads()
        assert main(["gasket"]) == 2


def test_config_json_drops_output_path():
    cfg = ExperimentConfig("gasket", "enumerate", out="/tmp/x")
    assert "out" not in cfg.to_json()


def test_all_covers_every_operation(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GASKETLAB_THREADS", "2")
    assert main(["all", "--level", "3", "--seed", "7", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "all.json").read_text())
    assert rep["checks"]["coverage_every_operation"] and rep["results"]["coverage"]["missing"] == []
    assert set(rep["results"]) == set(harness.RUNNERS) | {"coverage"}
    assert verify_hash(rep)
    capsys.readouterr()
