import json
import subprocess
import sys

import pytest

from brickcraft.assembly import ConfigError
from brickcraft.cli import main
from brickcraft.config import RunConfig, dump_config, parse_config
from brickcraft.env import EpisodeRecord, replay_record
from brickcraft.targets import load_target


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_enumerate_two(capsys):
    code, out, _ = run(capsys, "enumerate", "--bricks", "2")
    assert code == 0
    assert out.strip().splitlines()[-1] == "24"
    assert "2,24" in out


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "enumerate", "--bogus")[0] == 2
    assert run(capsys, "no-such-command")[0] == 2


def test_domain_errors_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "plan", "--method", "greedy", "--target", str(tmp_path / "missing.jsonl"))
    assert code == 1 and "plan" in err
    bad = tmp_path / "bad.ini"
    bad.write_text("[ppo]\nwarp_factor = 9\n")
    assert run(capsys, "train-ppo", "--config", str(bad), "--out", str(tmp_path / "x"))[0] == 1


def test_gen_plan_render_round_trip(capsys, tmp_path):
    d = tmp_path / "targets"
    assert run(capsys, "gen-assemblies", "--count", "2", "--out", str(d), "--seed", "1")[0] == 0
    index = d / "index.jsonl"
    rec_path = tmp_path / "greedy.jsonl"
    code, out, _ = run(capsys, "plan", "--method", "greedy", "--target", str(index), "--out", str(rec_path))
    assert code == 0
    summary = json.loads(out)
    rec = EpisodeRecord.load(rec_path)
    assert rec.final_iou == summary["final_iou"]
    target = load_target(json.loads(index.read_text().splitlines()[0]), d)
    assert replay_record(rec, target).final_iou == rec.final_iou
    ldr = tmp_path / "out.ldr"
    assert run(capsys, "render", "--record", str(rec_path), "--out", str(ldr),
               "--views-dir", str(tmp_path / "views"))[0] == 0
    assert any(line.startswith("1 ") for line in ldr.read_text().splitlines())
    assert (tmp_path / "views" / "front.pgm").read_text().startswith("P2")


def test_oracle_bench_csv(capsys):
    code, out, _ = run(capsys, "oracle-bench", "--bricks", "5", "12", "--repeats", "1")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "t,naive_ms,accelerated_ms"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["5", "12"]


def test_config_round_trip_and_unknown_keys():
    cfg = RunConfig.for_mode("mnist")
    assert cfg.ppo.gamma == 0.5 and cfg.model.hidden_dim == 64
    back = parse_config(dump_config(cfg))
    assert back == cfg
    tweaked = parse_config("[task]\nmode = tower\n[ppo]\ngradient_clipping = 0.25\ntimesteps = 64\n")
    assert tweaked.ppo.max_grad_norm == 0.25 and tweaked.ppo.n_steps == 64
    for text in ("[ppo]\nlearning_rat = 1\n", "[extra]\na = 1\n", "[task]\nmode = lunar\n",
                 "[task]\nmask = maybe\n", "[ppo]\nclip_epsilon = -1\n"):
        with pytest.raises(ConfigError):
            parse_config(text)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "brickcraft", "enumerate", "--bricks", "1"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip().endswith("1")
