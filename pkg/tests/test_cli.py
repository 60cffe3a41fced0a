from __future__ import annotations

import json

from kipg import harness as H
from kipg.cli import EXIT_CONFIG, EXIT_OK, EXIT_UNREACHED, main
from test_harness import SMALL


def _write_cfg(tmp_path, text=SMALL):
    path = tmp_path / "small.cfg"
    path.write_text(text)
    return path


def test_run_writes_reports_and_models(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, SMALL.replace("seeds = 0-1", "seeds = 0"))
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "comparison: small" in text and "mean over seeds" in text
    assert (out / "run.csv").read_text().startswith("method,budget,seed,pass_rate")
    assert (out / "Bayes.model").exists()

    assert main(["explain", str(out / "Bayes.model"), "--action", "lockshop", "--top", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "input-layer weights for lockshop(sh1)"
    assert sum(line.startswith("*") for line in lines) == 2


def test_strict_unreached_exit_code(tmp_path, capsys):
    text = SMALL.replace("pass_threshold = 0.6", "pass_threshold = 1.0").replace("seeds = 0-1", "seeds = 0")
    text = text.replace("methods = Bayes, CFG, NoKI, BaselineCombined", "methods = NoKI")
    cfg = _write_cfg(tmp_path, text)
    assert main(["run", str(cfg), "--strict"]) == EXIT_UNREACHED
    assert "unreached" in capsys.readouterr().out
    assert main(["run", str(cfg)]) == EXIT_OK


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, SMALL.replace("budgets = 10, 20", "budgets = 20, 10"))
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "budgets" in capsys.readouterr().err
    assert main(["events", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["events", str(_write_cfg(tmp_path))]) == EXIT_CONFIG


def test_features_dump(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert main(["features", str(cfg)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("# id: 1\nsame(State,Res,Shop)")
    text = SMALL.replace("clauses = micro.clauses", "max_len = 1")
    assert main(["features", str(_write_cfg(tmp_path, text)), "--enumerate"]) == EXIT_OK
    assert capsys.readouterr().out.count("# id:") == 9


def test_rollout_dump(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert main(["rollout", str(cfg), "--seed", "2"]) == EXIT_OK
    recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["time"] for r in recs] == list(range(8))
    assert all(r["reward"] <= 0 for r in recs)


def test_weights_command(tmp_path, capsys):
    text = SMALL.replace("seeds = 0-1", "seeds = 0") + "\n[explain]\naction = lockshop\nreference = 1, 3\n"
    assert main(["weights", str(_write_cfg(tmp_path, text))]) == EXIT_OK
    out = capsys.readouterr().out
    assert "input-layer weights: small" in out
    assert H.config_from_text(text).explain_method == "Combined"
