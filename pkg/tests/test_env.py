import numpy as np
import pytest

from brickcraft.actions import ActionMasks
from brickcraft.assembly import BrickAction
from brickcraft.env import (BrickEnv, EnvConfig, EpisodeRecord, Termination, random_policy,
                            replay_record, run_episode)
from brickcraft.geometry import OffsetSetId, enumerate_offsets
from brickcraft.targets import gen_random_assembly, tower_target

FULL = enumerate_offsets(OffsetSetId.FULL)
UP = FULL.index(next(o for o in FULL.offsets if tuple(o) == (0, 0, 1, 0)))


class AllowAll:
    """A mask source that trusts every action (stands in for an over-eager validity net)."""

    def masks(self, graph, offsets, bounds):
        return ActionMasks.from_offsets(np.ones((len(graph), len(offsets)), bool))


def test_reset_is_deterministic():
    t = tower_target(4)
    env = BrickEnv()
    a = env.reset(t, seed=3)
    b = env.reset(t, seed=3)
    assert a.graph == b.graph
    assert np.array_equal(a.masks.offset_valid, b.masks.offset_valid)
    assert a.node_features.tolist() == [[0, 0, 0, 0]]
    assert not env.done


def test_on_target_step_and_budget_finish():
    t = tower_target(3)
    env = BrickEnv()
    env.reset(t, 0)
    _, r, done, info = env.step(BrickAction(0, UP))
    assert r > 0 and not done
    _, r, done, info = env.step(BrickAction(1, UP))
    assert done and info["termination"] is Termination.BUDGET
    assert info["final_iou"] == 1.0
    with pytest.raises(RuntimeError):
        env.step(BrickAction(0, UP))


def test_oracle_overrides_permissive_masks():
    t = tower_target(3)
    env = BrickEnv(EnvConfig(mask_source=AllowAll()))
    env.reset(t, 0)
    env.step(BrickAction(0, UP))
    _, r, done, info = env.step(BrickAction(0, UP))    # lands on brick 1
    assert done and info["termination"] is Termination.INVALID
    assert r == 0.0
    assert env.record().termination == "InvalidAction"


def test_no_valid_action_terminates():
    class NoneValid:
        def masks(self, graph, offsets, bounds):
            return ActionMasks.from_offsets(np.zeros((len(graph), len(offsets)), bool))
    env = BrickEnv(EnvConfig(mask_source=NoneValid()))
    env.reset(tower_target(3), 0)
    assert env.done and env.termination is Termination.NO_VALID


def test_episode_logs_identical_for_same_seed(tmp_path):
    target = gen_random_assembly(np.random.default_rng(2)).target
    cfg = EnvConfig(offset_set=OffsetSetId.RANDOM_ASSEMBLY)
    r1 = run_episode(random_policy, BrickEnv(cfg), target, seed=11)
    r2 = run_episode(random_policy, BrickEnv(cfg), target, seed=11)
    assert r1.to_jsonl() == r2.to_jsonl()
    r1.save(tmp_path / "ep.jsonl")
    back = EpisodeRecord.load(tmp_path / "ep.jsonl")
    assert back == r1
    env = replay_record(back, target)
    assert env.final_iou == r1.final_iou
    assert env.record().to_jsonl() == r1.to_jsonl()


def test_return_telescopes_when_every_step_passes_the_gate():
    env = BrickEnv()
    t = tower_target(4)
    env.reset(t, 0)
    total = 0.0
    for i in range(3):
        _, r, _, _ = env.step(BrickAction(i, UP))
        total += r
    assert total == pytest.approx(env.final_iou - env.initial_iou, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(gamma=1.0)
