"""End-to-end command-line interface tests, run in process via main(argv)."""

import csv
import json

import pytest

from formation_ddqn import cli
from formation_ddqn.cli import main
from formation_ddqn.network import init_network, load_weights, save_weights


@pytest.fixture
def tiny_train_config(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({
        "train": {
            "episodes": 2,
            "batch_size": 8,
            "replay_capacity": 100,
            "replay_min": 16,
            "max_steps_per_episode": 12,
        }
    }))
    return str(path)


@pytest.fixture
def lab_scenario_config(tmp_path):
    path = tmp_path / "scenarios.json"
    path.write_text(json.dumps({
        "scenarios": {
            "lab": {
                "offsets": [[0.0, 0.4]],
                "steps": 6,
                "world": {"leader_mode": {"kind": "static"}},
            }
        }
    }))
    return str(path)


class TestParsing:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "formation-ddqn" in capsys.readouterr().out

    def test_missing_command_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["gradcheck", "--wat"]) == 1

    def test_invalid_model_choice(self, tiny_train_config, tmp_path, capsys):
        code = main(["train", "--model", "chase", "--config",
                     tiny_train_config, "--out", str(tmp_path / "w.json"),
                     "--seed", "0"])
        assert code == 1


class TestTrain:
    def test_train_writes_weights_and_stats(self, tiny_train_config,
                                            tmp_path, capsys):
        out = tmp_path / "keep.json"
        code = main(["train", "--model", "keep", "--config",
                     tiny_train_config, "--out", str(out), "--seed", "7"])
        assert code == 0
        net, info = load_weights(str(out))
        assert net.sizes == (8, 64, 64, 8)
        assert info["d_max"] == 5.0
        assert info["meta"]["model_kind"] == "keep"
        assert info["meta"]["seed"] == 7
        with open(f"{out}.stats.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "episode"
        assert len(rows) == 1 + 2
        printed = capsys.readouterr().out
        assert "trained keep model" in printed
        assert "backend" in printed

    def test_train_is_deterministic(self, tiny_train_config, tmp_path):
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (out_a, out_b):
            assert main(["train", "--model", "reach", "--config",
                         tiny_train_config, "--out", str(out),
                         "--seed", "3"]) == 0
        # identical bytes apart from nothing: the weight doc has no timestamps
        assert out_a.read_bytes() == out_b.read_bytes()
        assert (tmp_path / "a.json.stats.csv").read_bytes() == \
            (tmp_path / "b.json.stats.csv").read_bytes()

    def test_seed_changes_weights(self, tiny_train_config, tmp_path):
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        main(["train", "--model", "keep", "--config", tiny_train_config,
              "--out", str(out_a), "--seed", "0"])
        main(["train", "--model", "keep", "--config", tiny_train_config,
              "--out", str(out_b), "--seed", "1"])
        assert out_a.read_bytes() != out_b.read_bytes()

    def test_episode_override(self, tiny_train_config, tmp_path):
        out = tmp_path / "w.json"
        assert main(["train", "--model", "keep", "--config",
                     tiny_train_config, "--out", str(out), "--seed", "0",
                     "--episodes", "3"]) == 0
        with open(f"{out}.stats.csv", newline="") as fh:
            assert len(list(csv.reader(fh))) == 1 + 3

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"train": {"episodes": 1, "epsilom": {}}}))
        code = main(["train", "--model", "keep", "--config", str(cfg),
                     "--out", str(tmp_path / "w.json"), "--seed", "0"])
        assert code == 1
        assert "unknown key" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["train", "--model", "keep", "--config",
                     str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "w.json"), "--seed", "0"])
        assert code == 1


class TestEval:
    def test_eval_custom_scenario(self, weight_files, lab_scenario_config,
                                  tmp_path, capsys):
        reach, keep = weight_files
        out = tmp_path / "trace.csv"
        code = main(["eval", "--scenario", "lab", "--config",
                     lab_scenario_config, "--reach", reach, "--keep", keep,
                     "--seed", "0", "--out", str(out)])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        # header + 2 agents x 7 states
        assert len(rows) == 1 + 2 * 7
        printed = capsys.readouterr().out
        assert "scenario lab" in printed
        assert "collisions" in printed

    def test_eval_packaged_circle(self, weight_files, tmp_path):
        reach, keep = weight_files
        out = tmp_path / "trace.csv"
        code = main(["eval", "--scenario", "circle", "--reach", reach,
                     "--keep", keep, "--seed", "0", "--out", str(out)])
        assert code == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        # leader + two followers, 1200 steps plus the initial state
        assert len(rows) == 1 + 3 * 1201

    def test_eval_is_deterministic(self, weight_files, lab_scenario_config,
                                   tmp_path):
        reach, keep = weight_files
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (out_a, out_b):
            assert main(["eval", "--scenario", "lab", "--config",
                         lab_scenario_config, "--reach", reach,
                         "--keep", keep, "--seed", "5",
                         "--out", str(out)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_unknown_scenario(self, weight_files, tmp_path, capsys):
        reach, keep = weight_files
        code = main(["eval", "--scenario", "hexagon", "--reach", reach,
                     "--keep", keep, "--seed", "0",
                     "--out", str(tmp_path / "t.csv")])
        assert code == 1
        assert "unknown scenario" in capsys.readouterr().err

    def test_comparison_scenario_redirects(self, weight_files, tmp_path,
                                           capsys):
        reach, keep = weight_files
        code = main(["eval", "--scenario", "fig4-compare", "--reach", reach,
                     "--keep", keep, "--seed", "0",
                     "--out", str(tmp_path / "t.csv")])
        assert code == 1
        assert "compare-rewards" in capsys.readouterr().err

    def test_missing_weight_file(self, weight_files, tmp_path, capsys):
        _, keep = weight_files
        code = main(["eval", "--scenario", "circle", "--reach",
                     str(tmp_path / "ghost.json"), "--keep", keep,
                     "--seed", "0", "--out", str(tmp_path / "t.csv")])
        assert code == 1

    def test_malformed_weight_file(self, weight_files, tmp_path, capsys):
        _, keep = weight_files
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        code = main(["eval", "--scenario", "circle", "--reach", str(bad),
                     "--keep", keep, "--seed", "0",
                     "--out", str(tmp_path / "t.csv")])
        assert code == 1

    def test_architecture_mismatch(self, weight_files, tmp_path, capsys):
        reach, _ = weight_files
        odd = tmp_path / "odd.json"
        save_weights(init_network(5, (8, 16, 16, 8)), {"d_max": 5.0},
                     str(odd))
        code = main(["eval", "--scenario", "circle", "--reach", reach,
                     "--keep", str(odd), "--seed", "0",
                     "--out", str(tmp_path / "t.csv")])
        assert code == 1
        assert "architecture" in capsys.readouterr().err


class TestCompareRewards:
    def test_tiny_comparison(self, tmp_path, capsys):
        cfg = tmp_path / "cmp.json"
        cfg.write_text(json.dumps({
            "train": {
                "batch_size": 8,
                "max_steps_per_episode": 10,
            },
            "compare": {
                "episodes": 4,
                "replay_capacity": 100,
                "replay_min": 20,
                "seeds": [0, 1],
                "radius": 0.15,
                "window": 2,
            },
        }))
        out_dir = tmp_path / "cmp_out"
        code = main(["compare-rewards", "--config", str(cfg),
                     "--out", str(out_dir)])
        assert code == 0
        for arm in ("state_action", "state_only"):
            with open(out_dir / f"{arm}.csv", newline="") as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == ["seed", "window", "count"]
            # 2 seeds x 2 windows of 2 episodes
            assert len(rows) == 1 + 4
        with open(out_dir / "summary.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["seed", "state_action_final", "state_only_final"]
        assert len(rows) == 3
        printed = capsys.readouterr().out
        assert "final-window time-in-radius" in printed

    def test_compare_requires_config(self, tmp_path):
        assert main(["compare-rewards", "--out", str(tmp_path / "o")]) == 1


class TestChecks:
    def test_gradcheck_small_pass(self, capsys):
        code = main(["gradcheck", "--nets", "2", "--params", "10",
                     "--seed", "0"])
        assert code == 0
        out = capsys.readouterr().out
        assert "PASS" in out
        assert "worst relative error" in out

    def test_gradcheck_failure_exits_two(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "gradient_check",
                            lambda net, rng, n_checks: 0.5)
        code = main(["gradcheck", "--nets", "1", "--params", "1"])
        assert code == 2
        assert "FAIL" in capsys.readouterr().out

    def test_oracle_pass_path(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "oracle_check",
                            lambda seed: (True, 0.01, [(0, 1, 1, 0.01)]))
        assert main(["oracle-check"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_oracle_failure_exits_two(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "oracle_check",
                            lambda seed: (False, 0.4, [(0, 0, 1, 0.4)]))
        assert main(["oracle-check"]) == 2
        assert "FAIL" in capsys.readouterr().out
