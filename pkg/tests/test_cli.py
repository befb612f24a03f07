import json
import subprocess
import sys

import pytest

from equilib.cli import main
from equilib.config import bundled_suites, config_hash, dump_report, load_config, run_suite, validate_config
from equilib.errors import ConfigError

FAST = ["theorem_6_2", "arp_calibration", "equilibrium_catalog", "p3_checker", "parallelism", "curved_charts"]


def _strip(rep):
    rep = dict(rep)
    rep.pop("timestamp")
    return rep


@pytest.mark.parametrize("name", FAST)
def test_bundled_suites_pass(name, tmp_path):
    out = tmp_path / "r.json"
    assert main(["suite", name, "--report", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"] and rep["suite"] == name
    assert {"config_sha256", "seed", "versions"} <= set(rep["provenance"])


def test_arp_suite_verdict_triple():
    rep = run_suite("arp_calibration")
    got = [(r["field"], r["verdict"]) for r in rep["results"][0]["result"]["verdicts"]]
    for h in (0, 3):
        assert [v for _, v in got[h:h + 3]] == ["candidate-analytic", "flat-defect", "flat-defect"]


def test_report_deterministic_modulo_timestamp():
    a = run_suite("theorem_6_2")
    b = run_suite("theorem_6_2")
    assert dump_report(_strip(a)) == dump_report(_strip(b))


def test_unknown_key_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"suite": "x", "operations": [], "colour": "red"}))
    assert main(["suite", str(bad)]) == 2
    with pytest.raises(ConfigError):
        validate_config({"suite": "x", "operations": [{"op": "equilibrium", "params": {"nope": 1}}]})
    with pytest.raises(ConfigError) as err:
        validate_config({"suite": "x", "operations": [{"op": "warp"}]})
    assert "operations" in str(err.value)


def test_invalid_json_and_symmetry(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["suite", str(p)]) == 2
    assert main(["fluid", "--symmetry", "toroidal"]) == 2


def test_operation_failure_recorded_and_suite_continues():
    cfg = {"suite": "mixed", "operations": [
        {"id": "bad", "op": "equilibrium", "params": {"field": "nosuch(x1)", "samples": 50}},
        {"id": "good", "op": "equilibrium", "params": {"field": "norm_sq", "samples": 50}}]}
    rep = run_suite(cfg)
    assert not rep["passed"]
    by = {r["id"]: r for r in rep["results"]}
    assert not by["bad"]["passed"] and "only the functions" in by["bad"]["error"]
    assert by["good"]["passed"]


def test_subcommands(tmp_path, capsys):
    assert main(["test", "--field", "norm_sq", "--samples", "300"]) == 0
    assert main(["test", "--field", "x1^2+2*x2^2", "--samples", "300"]) == 1
    assert main(["fibers", "--field", "cyl_r2", "--levels", "1,4", "--grid", "48", "--classify",
                 "--export", str(tmp_path)]) == 0
    assert list(tmp_path.glob("*.off"))
    assert main(["isometry", "--gens", "so3", "--profile", "t^3+t", "--check"]) == 0
    assert main(["isometry", "--gens", '["dx", "Lz"]', "--check"]) == 1
    assert main(["arp", "--field", "example_4_3", "--point", "0,1,0", "--order", "8",
                 "--expect", "flat-defect"]) == 0
    csv = tmp_path / "s.csv"
    assert main(["fluid", "--index", "1", "--symmetry", "spherical", "--csv", str(csv)]) == 0
    assert csv.exists()
    out = capsys.readouterr()
    assert "PASS" in out.err and "FAIL" in out.err


def test_suite_list(capsys):
    assert main(["suite", "--list"]) == 0
    listed = capsys.readouterr().out
    for name in bundled_suites():
        assert name in listed


def test_config_hash_stable():
    cfg = load_config("p3_checker")
    assert config_hash(cfg) == config_hash(json.loads(json.dumps(cfg)))


def test_console_script_module_entry():
    r = subprocess.run([sys.executable, "-m", "equilib.cli", "suite", "--list"], capture_output=True, text=True)
    assert r.returncode == 0 and "theorem_6_2" in r.stdout
