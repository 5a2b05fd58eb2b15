import csv
import json
import subprocess
import sys

import pytest

from fraclab.cli import EXIT_FAIL, EXIT_OK, EXIT_SCHEMA, execute, main
from fraclab.experiments import ConfigError, run_experiment

LINE = {"shape": "box", "bounds": [[0, 1]], "spacing": 0.0625}


def _write(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


def _empty_cfg(seed=1):
    return {"kind": "linear-solve", "seed": seed, "domain": LINE, "kernel": {"s": 0.25, "p": 2},
            "measure": {"atoms": []}}


def test_empty_measure_gives_zero_field(tmp_path):
    cfg = _write(tmp_path / "empty.json", _empty_cfg())
    assert main(["--out", str(tmp_path / "out"), "run", str(cfg)]) == EXIT_OK
    with open(tmp_path / "out" / "empty" / "fields.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 16 and all(float(r["u"]) == 0.0 for r in rows)
    checks = json.loads((tmp_path / "out" / "empty" / "checks.json").read_text())
    assert {"converged", "zero_field"} <= {c["name"] for c in checks if c["passed"]}


def test_malformed_kind_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.json", dict(_empty_cfg(), kind="nonsense"))
    assert main(["--out", str(tmp_path), "run", str(cfg)]) == EXIT_SCHEMA
    assert "kind" in capsys.readouterr().out


@pytest.mark.parametrize("drop,field", [("domain", "domain"), ("kernel", "kernel")])
def test_missing_field_is_named(drop, field):
    cfg = _empty_cfg()
    del cfg[drop]
    with pytest.raises(ConfigError) as exc:
        run_experiment(cfg)
    assert exc.value.field.startswith(field)


@pytest.mark.parametrize("patch,field", [
    ({"kernel": {"s": 1.5, "p": 2}}, "kernel"),
    ({"seed": -1}, "seed"),
    ({"checks": {"bogus": True}}, "checks.bogus"),
    ({"measure": {"atoms": [{"point": [2.0], "mass": 1.0}]}}, "measure"),
])
def test_invalid_fields_are_named(patch, field):
    with pytest.raises(ConfigError) as exc:
        run_experiment(dict(_empty_cfg(), **patch))
    assert exc.value.field.startswith(field)


def test_invalid_json_exits_2(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert execute(bad, tmp_path)["status"] == EXIT_SCHEMA


def test_mixed_suite_counts(tmp_path, capsys):
    d = tmp_path / "suite"
    d.mkdir()
    _write(d / "a_ok.json", _empty_cfg())
    failing = dict(_empty_cfg(), measure={"atoms": [{"point": [0.5], "mass": 1.0}]},
                   checks={"dirac_slope": {"expected": 5.0, "r_min": 0.1, "r_max": 0.4}})
    _write(d / "b_fail.json", failing)
    assert main(["--out", str(tmp_path / "out"), "suite", str(d), "--jobs", "2"]) == EXIT_FAIL
    assert "aggregate: pass 1/2" in capsys.readouterr().out
    agg = json.loads((tmp_path / "out" / "suite.json").read_text())
    assert (agg["configs"], agg["passed"], agg["failed"], agg["schema_errors"]) == (2, 1, 1, 0)


def test_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path / "det.json", dict(_empty_cfg(), measure={"atoms": [{"point": [0.3], "mass": 1.0}]}))
    a = execute(cfg, tmp_path / "a")
    b = execute(cfg, tmp_path / "b")
    for name in ("summary.json", "checks.json", "fields.csv"):
        assert (tmp_path / "a" / "det" / name).read_bytes() == (tmp_path / "b" / "det" / name).read_bytes()
    assert a["status"] == b["status"] == EXIT_OK


def test_csv_floats_round_trip(tmp_path):
    cfg = _write(tmp_path / "rt.json", dict(_empty_cfg(), measure={"atoms": [{"point": [0.3], "mass": 1.0}]}))
    execute(cfg, tmp_path)
    with open(tmp_path / "rt" / "fields.csv") as fh:
        u = [r["u"] for r in csv.DictReader(fh)]
    assert any(len(v.replace("-", "").replace(".", "").split("e")[0]) >= 15 for v in u)
    assert all(repr(float(v)) == repr(float(format(float(v), ".17g"))) for v in u)


def test_seed_override(tmp_path):
    cfg = _write(tmp_path / "s.json", dict(_empty_cfg(seed=3)))
    main(["--out", str(tmp_path), "--seed", "12345", "run", str(cfg)])
    assert json.loads((tmp_path / "s" / "summary.json").read_text())["seed"] == 12345
    with pytest.raises(SystemExit):
        main(["--seed", "-4", "run", str(cfg)])


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path / "m.json", _empty_cfg())
    proc = subprocess.run([sys.executable, "-m", "fraclab", "--out", str(tmp_path), "run", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "[PASS] m" in proc.stdout
