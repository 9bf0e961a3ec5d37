import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachbench.harness import (
    ConfigError,
    RunConfig,
    build_run,
    compare,
    load_networks,
    parse_config,
    render_config,
    run_experiment,
)
from reachbench.harness.cli import main
from reachbench.harness.config import SCHEMA, as_flat_dict
from reachbench.harness.runner import format_table
from reachbench.metrics import read_csv

TINY = """
[run]
pipeline = cheat_coords
window = 5
[sac]
episodes = 12
steps_per_episode = 10
warmup_steps = 30
batch_size = 8
buffer_size = 500
hidden = 8, 8
[task]
active_joints = 3
"""


def tiny(**overrides) -> RunConfig:
    return parse_config(TINY, {k.replace("__", "."): str(v) for k, v in overrides.items()})


# -- config ---------------------------------------------------------------------

def test_empty_config_defaults():
    c = parse_config("")
    assert c.sac.gamma == 0.95
    assert c.sac.batch_size == 32
    assert c.sac.steps_per_episode == 100
    assert c.run.pipeline == "cheat_coords" and c.run.demo_episodes == 200
    assert c.run.window == 100


def test_range_error_names_line():
    with pytest.raises(ConfigError) as err:
        parse_config("# comment\n\ngamma = 1.5\n")
    assert err.value.line == 3
    assert str(err.value).startswith("line 3:")
    assert "gamma" in str(err.value)


@pytest.mark.parametrize("text,line", [
    ("[sac]\nfoo = 1\n", 2),
    ("[run]\npipeline = lidar\n", 2),
    ("[sac]\nbatch_size = many\n", 2),
    ("[nope]\n", 1),
    ("[sac]\njust words\n", 2),
    ("[run]\nseed = 1\n[task]\ntarget_low = 1, 2\n", 4),
    ("[run]\nimitation = maybe\n", 2),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line


def test_sections_and_bare_keys():
    c = parse_config("seed = 7\n[sac]\nhidden = 32, 16\n[task]\ntarget_low = 0.1, 0.2, 0.3\nv_max = 0.5\n")
    assert c.run.seed == 7
    assert c.sac.hidden == (32, 16)
    assert c.task.target_low == (0.1, 0.2, 0.3)
    assert c.chain.v_max == 0.5


def test_reduced_preset_and_explicit_keys_win():
    c = parse_config("scale = reduced\n[sac]\nepisodes = 10\n")
    assert c.task.active_joints == 3 and c.sac.steps_per_episode == 50
    assert c.sac.episodes == 10
    c = parse_config("scale = reduced\npipeline = contrastive\n")
    assert c.sac.buffer_size == 20_000
    c = parse_config("", {"run.scale": "reduced", "sac.hidden": "16,16"})
    assert c.sac.hidden == (16, 16)


def test_reward_flows_into_task():
    c = parse_config("reward = sparse\n")
    assert c.task_config.reward_kind == "sparse"


def test_render_roundtrip():
    for c in (parse_config(""), parse_config("scale = reduced\npipeline = contrastive\n"), tiny()):
        assert parse_config(render_config(c)) == c


@given(st.floats(0, 1), st.integers(1, 512), st.booleans(), st.sampled_from(["ball_pixels", "raw_image"]))
@settings(max_examples=40)
def test_render_roundtrip_property(gamma, batch, imitation, pipeline):
    c = parse_config("", {"gamma": repr(gamma), "batch_size": str(batch),
                          "imitation": str(imitation), "pipeline": pipeline})
    assert parse_config(render_config(c)) == c


# -- run artifacts ------------------------------------------------------------------

def test_run_writes_artifacts(tmp_path):
    status, log = run_experiment(tiny(), tmp_path)
    assert status == 0 and len(log) == 12
    for name in ("metrics.csv", "curve.svg", "resolved-config.ini", "run.log"):
        assert (tmp_path / name).exists()
    for net in ("policy", "critic", "critic_target", "temperature"):
        assert (tmp_path / "checkpoints" / "final" / f"{net}.ckpt").exists()
    assert not (tmp_path / "FAILED").exists()
    back = read_csv(tmp_path / "metrics.csv")
    assert back.rows == log.rows
    assert all(r.wall_ms == 0.0 for r in back.rows)
    root = ET.parse(tmp_path / "curve.svg").getroot()
    assert len(list(root.iter("{http://www.w3.org/2000/svg}polyline"))) == 1


def test_resolved_config_is_complete(tmp_path):
    config = tiny(run__seed=3)
    run_experiment(config, tmp_path)
    text = (tmp_path / "resolved-config.ini").read_text()
    resolved = parse_config(text)
    assert resolved == config
    keys = {line.split("=")[0].strip() for line in text.splitlines() if "=" in line}
    assert keys == {q.split(".", 1)[1] for q in SCHEMA}
    assert set(as_flat_dict(config)) == set(SCHEMA)


def test_same_seed_gives_identical_metrics(tmp_path):
    run_experiment(tiny(run__seed=5), tmp_path / "a")
    run_experiment(tiny(run__seed=5), tmp_path / "b")
    run_experiment(tiny(run__seed=6), tmp_path / "c")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a != (tmp_path / "c" / "metrics.csv").read_bytes()


def test_wall_clock_only_when_requested(tmp_path):
    _, log = run_experiment(tiny(run__record_wall_clock="true", sac__episodes=3), tmp_path)
    assert all(r.wall_ms > 0 for r in log.rows)


def test_imitation_preloads_demos_before_training(tmp_path):
    config = tiny(run__imitation="true", run__demo_episodes=4, sac__steps_per_episode=50, sac__episodes=2)
    run = build_run(config)
    assert run.demo_transitions > 0
    assert len(run.replay) == run.replay.demo_count == run.demo_transitions
    run_experiment(config, tmp_path)
    logged = (tmp_path / "run.log").read_text()
    assert f"demo transitions preloaded: {run.demo_transitions} (4 episodes)" in logged


def test_periodic_checkpoints(tmp_path):
    run_experiment(tiny(run__checkpoint_every=5), tmp_path)
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["episode-10", "episode-5", "final"]


def test_failure_leaves_marker(tmp_path):
    config = tiny(task__target_low="3, 3, 3", task__target_high="3.1, 3.1, 3.1")
    status, log = run_experiment(config, tmp_path)
    assert status == 1 and len(log) == 0
    assert "Traceback" in (tmp_path / "FAILED").read_text()
    assert (tmp_path / "resolved-config.ini").exists()
    assert "FAILED" in (tmp_path / "run.log").read_text()


def test_checkpoint_reload_reproduces_policy(tmp_path):
    config = tiny()
    run_experiment(config, tmp_path)
    fresh = build_run(config)
    load_networks(fresh, tmp_path / "checkpoints" / "final")
    again = build_run(config)
    load_networks(again, tmp_path / "checkpoints" / "final")
    obs = fresh.pipeline.reset(fresh.env, np.random.default_rng(0))
    a, _ = fresh.agent.sample_action(obs, np.random.default_rng(1), deterministic=True)
    b, _ = again.agent.sample_action(obs, np.random.default_rng(1), deterministic=True)
    assert a.tobytes() == b.tobytes()


# -- compare --------------------------------------------------------------------

def test_compare_single_run_and_absent_checkpoints(tmp_path):
    run_experiment(tiny(), tmp_path / "r")
    cps, rows = compare([tmp_path / "r"], (4, 12, 40))
    assert len(rows) == 1
    assert rows[0].values[2] is None
    assert rows[0].values[:2] == [read_csv(tmp_path / "r" / "metrics.csv").success_rate[i] for i in (3, 11)]
    table = format_table(cps, rows)
    assert len(table.splitlines()) == 2
    assert table.splitlines()[1].split()[3] == "-"


def test_compare_paper_headers(tmp_path):
    run_experiment(tiny(), tmp_path / "r")
    cps, rows = compare([tmp_path / "r"])
    assert cps == (10_000, 20_000, 30_000)
    assert format_table(cps, rows).splitlines()[0].split()[1:4] == ["10k", "20k", "30k"]
    assert rows[0].values == [None, None, None]


def test_compare_reduced_scale_thirds(tmp_path):
    run_experiment(tiny(), tmp_path / "r")
    cps, _ = compare([tmp_path / "r"], scale="reduced")
    assert cps == (4, 8, 12)


def test_compare_missing_metrics_names_run(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError, match="empty"):
        compare([tmp_path / "empty"])


# -- CLI --------------------------------------------------------------------------

def write_tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def test_cli_run_and_compare(tmp_path, capsys):
    cfg = write_tiny(tmp_path)
    assert main(["run", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "a")]) == 0
    assert parse_config((tmp_path / "a" / "resolved-config.ini").read_text()).run.seed == 2
    capsys.readouterr()
    out_csv = tmp_path / "cmp.csv"
    assert main(["compare", str(tmp_path / "a"), "--scale", "reduced", "--csv", str(out_csv)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].split() == ["run", "4", "8", "12", "episodes"]
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["run", "4", "8", "12", "episodes"] and len(rows) == 2


def test_cli_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[sac]\ngamma = 2\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["run", "--set", "nonsense"]) == 2
    assert main(["compare", str(tmp_path / "nowhere")]) == 2


def test_cli_demo_gen(tmp_path):
    cfg = write_tiny(tmp_path)
    assert main(["demo-gen", "--config", str(cfg), "--episodes", "3", "--out", str(tmp_path),
                 "--set", "steps_per_episode=50"]) == 0
    data = np.load(tmp_path / "demos.npz")
    assert data["actions"].shape[1] == 6
    assert data["obs_vec"].shape == (len(data["actions"]), 12)
    assert data["dones"].sum() == 3


def test_cli_render_debug(tmp_path):
    assert main(["render-debug", "--frames", "2", "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.glob("*.ppm"))
    assert names == ["front-000.ppm", "front-001.ppm", "wrist-000.ppm", "wrist-001.ppm"]
