import json

import pytest

from groundstate.cli import emit_report, load_config, main, parse_override, run_config
from groundstate.errors import ConfigError

PURE = """
[potential]
family = "PurePower"
q = 4.0

[run]
n = 13
alphas = [1.0, 2.0]
"""

TWO_POWER = """
[potential]
family = "TwoPower"
q1 = 3.5
q2 = 5.0
"""


@pytest.fixture
def pure_cfg(tmp_path):
    p = tmp_path / "pure.toml"
    p.write_text(PURE)
    return p


def test_exponents_only_writes_single_report(pure_cfg, tmp_path):
    out = tmp_path / "out"
    status, manifest = run_config(pure_cfg, ["exponents"], out)
    assert status == 0
    assert [f["path"] for f in manifest["files"]] == ["exponents.json"]
    table = json.loads((out / "exponents.json").read_text())
    assert table["m_s"] == pytest.approx(1.0)


def test_gated_stage_runs_hypothesis_check_first(pure_cfg, tmp_path):
    status, manifest = run_config(pure_cfg, ["fit"], tmp_path / "out")
    assert status == 0
    assert list(manifest["stages"]) == ["check", "fit"]


def test_k_failure_halts_pipeline(tmp_path):
    cfg = tmp_path / "two.toml"
    cfg.write_text(TWO_POWER)
    status, manifest = run_config(cfg, None, tmp_path / "out")
    assert status == 1
    st = manifest["stages"]
    assert "K" in st["check"]["verdict"]
    assert all(v["verdict"].startswith("skipped (hypothesis") for k, v in st.items() if k != "check")


def test_full_pipeline_artifacts_and_determinism(pure_cfg, tmp_path):
    args = ["run", "--config", str(pure_cfg), "--override", "experiment.T=2.0",
            "--override", "evolve.T=1.0", "--override", "run.alphas=[1.0, 2.0, 4.0]"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    files = [f["path"] for f in man["files"]]
    assert "exponents.json" in files and "separation.json" in files and "expansion.json" in files
    assert sum(f.startswith("profile_alpha_") for f in files) == 3
    assert sum(f.endswith("_trace.csv") and f != "evolve_trace.csv" for f in files) == 2
    for f in files + ["manifest.json"]:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_report_renders_plots(pure_cfg, tmp_path):
    out = tmp_path / "out"
    run_config(pure_cfg, ["shoot", "separation"], out, ["separation.halvings=1"])
    summary, missing = emit_report(out)
    assert "separation" in summary and not missing
    assert (out / "profiles.svg").exists() and (out / "separation_gaps.svg").exists()


def test_report_lists_missing_artifacts(pure_cfg, tmp_path):
    out = tmp_path / "out"
    run_config(pure_cfg, ["exponents"], out)
    (out / "exponents.json").unlink()
    summary, missing = emit_report(out, plots=False)
    assert missing == ["exponents.json"]
    assert "missing artifact: exponents.json" in summary


def test_empty_manifest_gives_empty_summary(tmp_path, capsys):
    (tmp_path / "manifest.json").write_text('{"stages": {}, "files": []}')
    assert main(["report", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out == ""


def test_override_parsing():
    assert parse_override("evolve.T=2.5") == (["evolve", "T"], 2.5)
    assert parse_override("run.alphas=[1, 2]") == (["run", "alphas"], [1, 2])
    assert parse_override("shoot.method=DOP853") == (["shoot", "method"], "DOP853")
    with pytest.raises(ConfigError):
        parse_override("noequals")


@pytest.mark.parametrize("text, needle", [
    ("[potential\n", "line 1"),
    ('[potential]\nfamily = "PurePower"\nq = 4.0\n[bogus]\nx = 1\n', "[bogus]"),
    ('[potential]\nfamily = "PurePower"\nq = 4.0\n[run]\nnn = 1\n', "'nn'"),
    ('[potential]\nfamily = "Nope"\n', "unknown potential family"),
    ('[run]\nn = 13\n', "missing table [potential]"),
])
def test_config_diagnostics(tmp_path, text, needle):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError, match=None) as info:
        load_config(p)
    assert needle in str(info.value)


def test_exit_codes(tmp_path, pure_cfg):
    assert main(["check", "--config", str(tmp_path / "absent.toml")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["check", "--config", str(pure_cfg), "--out", str(tmp_path / "o")]) == 0
