import json
import shutil

import pytest
from filelock import FileLock

import s2tower.cli as cli
from conftest import dim6_config, run_cli, write_config
from s2tower.exactlin import Matrix
from s2tower.tower import jordan_block


def read(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture
def config_path(tmp_path):
    return write_config(tmp_path / "config.json", dim6_config())


@pytest.fixture
def booted(tmp_path, config_path):
    out = tmp_path / "run"
    assert run_cli(["bootstrap", "--config", config_path, "--out", out]) == 0
    return out


def test_bootstrap_writes_state_and_certificate(booted, capsys):
    state = read(booted / "tower.json")
    cert = read(booted / "certs" / "bootstrap.json")
    assert state["stagesDone"] == 0 and state["seed"] == 7
    assert cert["configHash"] == state["configHash"] and cert["seed"] is not None
    assert cert["timestamp"] is None


def test_bootstrap_state_verifies(booted, capsys):
    assert run_cli(["verify", "--out", booted]) == 0
    report = read(booted / "report.json")
    assert report["pass"] and all(c["pass"] for c in report["checks"])


def test_bootstrap_summary_names_t_and_l(tmp_path, config_path, capsys):
    run_cli(["bootstrap", "--config", config_path, "--out", tmp_path / "o"])
    out = capsys.readouterr().out
    assert "t = diag(1^4, (-1)^2)" in out and "L = " in out and "radius = 4" in out


def test_odd_codimension_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", dim6_config(r=3))
    assert run_cli(["bootstrap", "--config", cfg, "--out", tmp_path / "o"]) == 2
    assert "determinant" in capsys.readouterr().err


def test_h_with_involution_exits_2_with_witness(tmp_path, capsys):
    s = Matrix.diag([1, 1, 1, 1, -1, -1])
    u = jordan_block(6)
    h = [{"name": "u", "matrix": u.to_json()}, {"name": "s", "matrix": (u @ s @ u.inverse()).to_json()}]
    cfg = write_config(tmp_path / "c.json", dim6_config(H=h))
    assert run_cli(["bootstrap", "--config", cfg, "--out", tmp_path / "o"]) == 2
    err = capsys.readouterr().err
    assert "H contains an involution" in err and "witness:" in err
    assert not (tmp_path / "o" / "tower.json").exists()


def test_a_containing_t_exits_2(tmp_path, capsys):
    a = [{"matrix": Matrix.diag([1, 1, 1, 1, -1, -1]).to_json()}]
    cfg = write_config(tmp_path / "c.json", dim6_config(A=a))
    assert run_cli(["bootstrap", "--config", cfg, "--out", tmp_path / "o"]) == 2
    assert "A contains an involution" in capsys.readouterr().err


def test_bad_budget_exits_2(tmp_path):
    cfg = dim6_config()
    cfg["budgets"]["retryCap"] = 0
    path = write_config(tmp_path / "c.json", cfg)
    assert run_cli(["bootstrap", "--config", path, "--out", tmp_path / "o"]) == 2


def test_missing_files_exit_2(tmp_path, capsys):
    assert run_cli(["verify", "--state", tmp_path / "nope.json"]) == 2
    assert run_cli(["bootstrap", "--config", tmp_path / "nope.json"]) == 2
    assert run_cli(["tower", "--state", tmp_path / "nope.json", "--stages", 1]) == 2
    assert run_cli(["cert", "show", tmp_path / "nope.json"]) == 2


def test_zero_stages_is_a_no_op(booted):
    before = (booted / "tower.json").read_bytes()
    assert run_cli(["tower", "--out", booted, "--stages", 0]) == 0
    assert (booted / "tower.json").read_bytes() == before


def test_ledger_grows_by_handled_candidates(booted):
    assert run_cli(["tower", "--out", booted, "--stages", 3]) == 0
    state = read(booted / "tower.json")
    assert state["stagesDone"] == 3
    assert len(state["ledger"]) == len(state["processed"]) - len(state["skipped"])
    assert sorted(p.name for p in (booted / "certs").iterdir()) == [
        "bootstrap.json", "f1.json", "f2.json", "f3.json"]
    # a completed budget is not redone
    before = (booted / "tower.json").read_bytes()
    assert run_cli(["tower", "--out", booted, "--stages", 3, "--resume"]) == 0
    assert (booted / "tower.json").read_bytes() == before


def test_advanced_state_needs_resume(booted):
    assert run_cli(["tower", "--out", booted, "--stages", 1]) == 0
    assert run_cli(["tower", "--out", booted, "--stages", 2]) == 2
    assert run_cli(["tower", "--out", booted, "--stages", 2, "--resume"]) == 0


def test_interrupt_and_resume_is_byte_identical(tmp_path, booted, monkeypatch):
    straight = tmp_path / "straight"
    shutil.copytree(booted, straight)
    assert run_cli(["tower", "--out", straight, "--stages", 3]) == 0

    real_save = cli.save_state
    calls = {"n": 0}

    def flaky_save(state, path):
        real_save(state, path)
        calls["n"] += 1
        if calls["n"] == 3:
            raise KeyboardInterrupt

    monkeypatch.setattr(cli, "save_state", flaky_save)
    with pytest.raises(KeyboardInterrupt):
        run_cli(["tower", "--out", booted, "--stages", 3])
    monkeypatch.setattr(cli, "save_state", real_save)
    partial = read(booted / "tower.json")
    assert partial["stagesDone"] < 3
    assert run_cli(["tower", "--out", booted, "--stages", 3, "--resume"]) == 0
    assert (booted / "tower.json").read_bytes() == (straight / "tower.json").read_bytes()
    for cert in (straight / "certs").iterdir():
        assert (booted / "certs" / cert.name).read_bytes() == cert.read_bytes()


def test_locked_state_is_refused(booted, capsys):
    with FileLock(str(booted / "tower.json") + ".lock"):
        assert run_cli(["tower", "--out", booted, "--stages", 1]) == 2
    assert "locked" in capsys.readouterr().err


def test_cert_show_and_replay(booted, capsys):
    path = booted / "certs" / "bootstrap.json"
    assert run_cli(["cert", "show", path]) == 0
    out = capsys.readouterr().out
    cert = read(path)
    assert f"radius: {cert['radius']}" in out
    assert f"L: {cert['scheme']['L']}" in out
    assert f"checked words: {cert['checkedWords']}" in out
    assert run_cli(["cert", "replay", path]) == 0
    out = capsys.readouterr().out
    assert "MISMATCH" not in out and "agree ball_scan" in out


def test_cert_with_altered_l_is_a_mismatch(booted, capsys):
    path = booted / "certs" / "bootstrap.json"
    cert = read(path)
    cert["scheme"]["L"] = str(int(cert["scheme"]["L"]) * 2)
    bad = booted / "tampered.json"
    bad.write_text(json.dumps(cert), encoding="utf-8")
    assert run_cli(["cert", "replay", bad]) == 1
    assert "MISMATCH ell_matches_scheme" in capsys.readouterr().out


def test_malformed_certificate_exits_2(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}", encoding="utf-8")
    assert run_cli(["cert", "show", p]) == 2


# -- full runs ---------------------------------------------------------------------------


def test_full_run_passes(cli_runs):
    _, runs = cli_runs
    out, codes = runs[0]
    assert codes == [0, 0, 0]
    report = read(out / "report.json")
    assert {c["check"] for c in report["checks"]} == {
        "malnormal", "no_involutions", "sharp2trans_witnesses", "pchar2", "aux_condition",
        "involutions_conjugate", "embedded_action", "commuting_normal", "certificates_replay"}


def test_artifacts_embed_hash_and_seed(cli_runs):
    _, runs = cli_runs
    out, _ = runs[0]
    state = read(out / "tower.json")
    chash = state["configHash"]
    assert chash and state["seed"] == 7
    for p in (out / "certs").iterdir():
        c = read(p)
        assert c["configHash"] == chash and "seed" in c
    report = read(out / "report.json")
    assert report["configHash"] == chash and report["seed"] == 7


def test_tampered_ledger_fails_verification(cli_runs, tmp_path, capsys):
    _, runs = cli_runs
    src, _ = runs[0]
    work = tmp_path / "tampered"
    shutil.copytree(src, work)
    state = read(work / "tower.json")
    idx = next(i for i, e in enumerate(state["ledger"]) if e["case"] == "FreeCase")
    state["ledger"][idx]["f"] = [{"gen": "f1", "pow": 2}]
    (work / "tower.json").write_text(json.dumps(state), encoding="utf-8")
    capsys.readouterr()
    assert run_cli(["verify", "--out", work]) == 1
    out = capsys.readouterr().out
    assert "FAIL sharp2trans_witnesses" in out and "witness:" in out
    report = read(work / "report.json")
    failed = {c["check"] for c in report["checks"] if not c["pass"]}
    assert failed == {"sharp2trans_witnesses"}
