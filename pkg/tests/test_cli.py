import csv
import json

import pytest
import yaml

from hhmm_ce.cli import main, percent
from hhmm_ce.config import ConfigError, ExperimentConfig
from hhmm_ce.grid_world import Case
from hhmm_ce.policy import flat_init, save_policy

SMALL = {
    "scenario": {"case": "case3", "horizon": 30, "width": 6, "height": 6},
    "policy": {"levels": [4, 2]},
    "ce": {"n_samples": 40, "criterion": 2, "max_iterations": 6, "seed": 1},
    "evaluation": {"episodes": 25, "seed": 3},
    "qlearning": {"steps": 3000, "windows": 4, "warmup": 50},
}


def write_config(tmp_path, doc, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


# configuration


def test_config_defaults_round_trip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_yaml(cfg.to_yaml())
    assert again == cfg
    assert ExperimentConfig.from_yaml(again.to_yaml()).to_dict() == cfg.to_dict()


def test_config_round_trip_custom(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "sweep": {"levels": [[16], [16, 2]],
                                                         "criteria": ["weak", 7]}})
    path = tmp_path / "c.yaml"
    cfg.save(path)
    assert ExperimentConfig.load(path) == cfg


@pytest.mark.parametrize("doc, key", [
    ({"ce": {"rho": 1.5}}, "ce.rho"),
    ({"ce": {"rhoo": 0.5}}, "ce.rhoo"),
    ({"cee": {}}, "cee"),
    ({"scenario": {"case": "case9"}}, "scenario.case"),
    ({"scenario": {"width": 0}}, "scenario.width"),
    ({"policy": {"levels": []}}, "policy.levels"),
    ({"policy": {"levels": [16, 0]}}, "policy.levels"),
    ({"policy": {"smoothing": -1}}, "policy.smoothing"),
    ({"ce": {"criterion": "sometimes"}}, "ce.criterion"),
    ({"ce": {"n_samples": 2.5}}, "ce.n_samples"),
    ({"qlearning": {"gamma": 1.0}}, "qlearning.gamma"),
    ({"evaluation": {"episodes": 0}}, "evaluation.episodes"),
    ({"sweep": {"levels": [[16], "x"]}}, "sweep.levels[1]"),
])
def test_config_errors_name_the_key(doc, key):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(doc)
    assert err.value.key == key
    assert str(err.value).startswith(key + ":")


def test_config_reads_exponent_floats():
    cfg = ExperimentConfig.from_yaml("policy: {smoothing: 1e-3}\n")
    assert cfg.policy.smoothing == 0.001


def test_reference_optima():
    assert ExperimentConfig.from_dict({"scenario": {"case": "case1"}}).reference == 85
    assert ExperimentConfig.from_dict({"scenario": {"case": "case3"}}).reference == 69
    assert ExperimentConfig.from_dict({"scenario": {"case": "case2"}}).reference is None
    cfg = ExperimentConfig.from_dict({"scenario": {"case": "case2"}, "evaluation": {"reference": 40}})
    assert cfg.reference == 40.0 and cfg.case is Case.BLIND


def test_percent_rounding():
    assert percent(84, 85) == 99
    assert percent(53.82, 69) == 78
    assert percent(1, 200) == 1  # halves go up
    assert percent(5, None) is None


# commands


def test_param_count_command(capsys):
    assert main(["param-count", "16", "2", "2", "2"]) == 0
    assert capsys.readouterr().out.strip() == "758"
    assert main(["param-count", "16"]) == 0
    assert capsys.readouterr().out.strip() == "480"
    assert main(["param-count"]) == 2


def test_train_writes_outputs_and_is_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert "mean reward" in out and "%" in out
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "policy.json").read_bytes(), (tmp_path / "b" / "policy.json").read_bytes()
    assert a == b
    hist = read_csv(tmp_path / "a" / "history.csv")
    assert hist[0] == ["iter", "best", "threshold", "elite_mean", "best_so_far", "unsuccessful"]
    res = json.loads((tmp_path / "a" / "results.json").read_text())
    assert res["param_count"] == 160 and 0 <= res["mean"] <= 100
    assert res["percent"] == percent(res["mean"], 69)
    # a different seed changes the run
    assert main(["train", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "policy.json").read_bytes() != a


def test_train_rejects_bad_config(tmp_path, capsys):
    cfg = write_config(tmp_path, {"ce": {"rho": 1.5}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) != 0
    assert "ce.rho" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_eval_flat_case1_and_single_episode(tmp_path, capsys):
    doc = {"scenario": {"case": "case1"}, "policy": {"levels": [16]},
           "evaluation": {"episodes": 200, "seed": 0}, "output": {"episodes": "ep.csv"}}
    cfg = write_config(tmp_path, doc)
    pol = tmp_path / "flat.json"
    save_policy(flat_init([16]), pol)
    assert main(["eval", "--config", cfg, "--policy", str(pol), "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "results.json").read_text())
    assert res["mean"] < 5  # a random walk rarely parks near the target
    rows = read_csv(tmp_path / "ep.csv")
    assert rows[0] == ["episode", "reward"] and len(rows) == 201

    doc["evaluation"]["episodes"] = 1
    cfg = write_config(tmp_path, doc, "one.yaml")
    assert main(["eval", "--config", cfg, "--policy", str(pol), "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "results.json").read_text())
    assert res["min"] == res["mean"] == res["max"]


def test_eval_rejects_corrupt_policy(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL)
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 1, "level_sizes": [2]}')
    assert main(["eval", "--config", cfg, "--policy", str(bad), "--out", str(tmp_path)]) == 2
    assert "policy" in capsys.readouterr().err
    assert main(["eval", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_replay_csv(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    pol = tmp_path / "p.json"
    save_policy(flat_init([4, 2]), pol)
    assert main(["replay", "--config", cfg, "--policy", str(pol), "--seed", "5",
                 "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "trajectory.csv")
    assert rows[0][-3:] == ["m1", "m2", "cumV"]
    assert len(rows) - 1 == 30
    cum = [int(r[-1]) for r in rows[1:]]
    assert all(b - a in (0, 1) for a, b in zip(cum, cum[1:]))


def test_sweep_table(tmp_path):
    doc = {**SMALL, "sweep": {"levels": [[2], [2, 2], [3, 1, 2]], "criteria": ["weak"]}}
    doc["ce"] = {**doc["ce"], "max_iterations": 3}
    cfg = write_config(tmp_path, doc)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0] == ["levels", "criterion", "param_count", "iterations", "mean_reward",
                       "percent", "status"]
    assert [r[0] for r in rows[1:]] == ["[2]", "[2,2]", "[3,1,2]"]
    assert all(r[-1] == "ok" for r in rows[1:])
    text = (tmp_path / "sweep.txt").read_text().splitlines()
    assert len(text) == 4 and len({len(line) for line in text}) == 1


def test_sweep_param_count_column(tmp_path):
    doc = {**SMALL, "scenario": {"case": "case3", "horizon": 5},
           "ce": {"n_samples": 10, "max_iterations": 1},
           "sweep": {"levels": [[16], [16, 2, 2, 2]], "criteria": ["weak"]},
           "evaluation": {"episodes": 5}}
    cfg = write_config(tmp_path, doc)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert [r[2] for r in rows[1:]] == ["480", "758"]


def test_empty_sweep(tmp_path):
    cfg = write_config(tmp_path, {"sweep": {"levels": []}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "sweep.csv") == [["levels", "criterion", "param_count", "iterations",
                                                 "mean_reward", "percent", "status"]]


def test_sweep_reports_failed_cells(tmp_path, monkeypatch):
    import hhmm_ce.cli as cli

    real = cli.optimize

    def flaky(sc, levels, config):
        if levels == [2, 2]:
            raise RuntimeError("boom")
        return real(sc, levels, config)

    monkeypatch.setattr(cli, "optimize", flaky)
    doc = {**SMALL, "sweep": {"levels": [[2], [2, 2], [3]], "criteria": ["weak"]}}
    cfg = write_config(tmp_path, doc)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 1
    rows = read_csv(tmp_path / "sweep.csv")
    assert [r[-1] for r in rows[1:]] == ["ok", "failed: boom", "ok"]


def test_qtrain_and_qeval(tmp_path, capsys):
    doc = {**SMALL, "scenario": {"case": "case3", "width": 5, "height": 5}}
    cfg = write_config(tmp_path, doc)
    assert main(["qtrain", "--config", cfg, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "160000 states x 16 actions" in out
    rows = read_csv(tmp_path / "qwindows.csv")
    assert rows[0] == ["mode", "worst", "mean", "best", "worst_pct", "mean_pct", "best_pct"]
    for row in rows[1:]:
        assert all(0 <= float(v) <= 100 for v in row[1:4])
    first = rows
    assert main(["qeval", "--config", cfg, "--policy", str(tmp_path / "qtable.bin"),
                 "--out", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "qwindows.csv") == first


def test_qtrain_full_grid_is_refused_by_budget(tmp_path, capsys):
    cfg = write_config(tmp_path, {"qlearning": {"memory_budget_mb": 1024}})
    assert main(["qtrain", "--config", cfg, "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "2.62 GB" in err and "width/height" in err


def test_qeval_rejects_mismatched_grid(tmp_path, capsys):
    doc = {**SMALL, "scenario": {"case": "case3", "width": 3, "height": 3}}
    cfg = write_config(tmp_path, doc)
    assert main(["qtrain", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc["scenario"]["width"] = 4
    other = write_config(tmp_path, doc, "other.yaml")
    assert main(["qeval", "--config", other, "--policy", str(tmp_path / "qtable.bin"),
                 "--out", str(tmp_path)]) == 2
