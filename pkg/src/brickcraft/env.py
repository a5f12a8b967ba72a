"""Episodic construction MDP: reset/step over graph state, masks and gated IoU reward."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NamedTuple, Protocol

import numpy as np

from .actions import ActionMasks, compute_masks, is_valid_action, masked_sample, NoValidAction
from .assembly import (AssemblyGraph, BrickAction, Bounds, StepEntry, initial_graph, parse_log,
                       place, write_log)
from .geometry import OffsetSetId, apply_offset, enumerate_offsets
from .reward import IouTracker, RewardConfig, gate_passes
from .targets import TargetInfo, brick_cells


class Termination(str, enum.Enum):
    BUDGET = "BudgetExhausted"
    INVALID = "InvalidAction"
    NO_VALID = "NoValidAction"


class MaskSource(Protocol):
    def masks(self, graph: AssemblyGraph, offsets, bounds) -> ActionMasks: ...


class OracleMasks:
    mode = "accelerated"

    def masks(self, graph, offsets, bounds) -> ActionMasks:
        return compute_masks(graph, offsets, bounds, self.mode)

    def describe(self) -> str:
        return "oracle"


@dataclass(frozen=True)
class EnvConfig:
    offset_set: OffsetSetId = OffsetSetId.FULL
    bounds: Bounds | None = None        # None: use the target's world
    reward: RewardConfig = RewardConfig()
    mask_source: Any = field(default_factory=OracleMasks)
    gamma: float = 0.75
    invalid_reward: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "offset_set", OffsetSetId(self.offset_set))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        thr = getattr(self.mask_source, "threshold", 0.5)
        if not 0.0 < thr < 1.0:
            raise ValueError(f"mask threshold must lie in (0, 1), got {thr}")

    def describe(self) -> dict:
        src = self.mask_source
        return {"offset_set": self.offset_set.value,
                "bounds": self.bounds.to_list() if self.bounds else None,
                "gate_fraction": self.reward.gate_fraction,
                "mask_source": src.describe() if hasattr(src, "describe") else type(src).__name__,
                "gamma": self.gamma, "invalid_reward": self.invalid_reward}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.describe(), sort_keys=True).encode()).hexdigest()[:16]


class Observation(NamedTuple):
    graph: AssemblyGraph
    views: list
    masks: ActionMasks
    budget: int

    @property
    def node_features(self) -> np.ndarray:
        return self.graph.node_features()


class BrickEnv:
    """One construction episode at a time; call :meth:`reset` before stepping."""

    def __init__(self, cfg: EnvConfig = EnvConfig()):
        self.cfg = cfg
        self.offsets = enumerate_offsets(cfg.offset_set)
        self.target: TargetInfo | None = None
        self.done = True

    @property
    def bounds(self) -> Bounds:
        return self.cfg.bounds or self.target.bounds

    def reset(self, target: TargetInfo, seed: int | None = None) -> Observation:
        if target.exact_volume is None:
            raise ValueError("the environment scores against target.exact_volume")
        self.target = target
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.graph = initial_graph()
        self.tracker = IouTracker(target.exact_volume, [brick_cells(self.graph.nodes[0], self.bounds)])
        self.initial_iou = self.tracker.iou()
        self.steps: list[StepEntry] = []
        self.termination: Termination | None = None
        self.done = False
        self.masks = self._masks()
        if len(self.graph) >= target.budget:
            self._finish(Termination.BUDGET)
        elif not self.masks.any_valid:
            self._finish(Termination.NO_VALID)
        return self._obs()

    def _masks(self) -> ActionMasks:
        return self.cfg.mask_source.masks(self.graph, self.offsets, self.bounds)

    def _obs(self) -> Observation:
        return Observation(self.graph, self.target.views, self.masks, self.target.budget)

    def _finish(self, why: Termination):
        self.done = True
        self.termination = why

    @property
    def final_iou(self) -> float:
        return self.tracker.iou()

    def step(self, action: BrickAction):
        if self.done:
            raise RuntimeError("step() called on a finished episode; reset first")
        action = BrickAction(int(action[0]), int(action[1]))
        masked = int(self.masks.offset_valid.size - self.masks.count_valid())
        t = len(self.graph)
        # the oracle has the last word whatever produced the masks
        if not is_valid_action(self.graph, action, self.offsets, self.bounds):
            pose = apply_offset(self.graph.nodes[action.pivot], self.offsets[action.offset])
            reward = float(self.cfg.invalid_reward)
            self.steps.append(StepEntry(t, action.pivot, action.offset, pose, reward,
                                        {"masked": masked, "valid": False}))
            self._finish(Termination.INVALID)
            return self._obs(), reward, True, self._info(pose)
        self.graph, pose = place(self.graph, action, self.offsets, self.bounds)
        cells = brick_cells(pose, self.bounds)
        delta, on = self.tracker.add(cells)
        reward = delta if gate_passes(on, len(cells), self.cfg.reward) else 0.0
        self.steps.append(StepEntry(t, action.pivot, action.offset, pose, reward, {"masked": masked}))
        if len(self.graph) >= self.target.budget:
            self.masks = ActionMasks.from_offsets(np.zeros((len(self.graph), len(self.offsets)), bool))
            self._finish(Termination.BUDGET)
        else:
            self.masks = self._masks()
            if not self.masks.any_valid:
                self._finish(Termination.NO_VALID)
        return self._obs(), reward, self.done, self._info(pose)

    def _info(self, pose) -> dict:
        info = {"pose": pose, "iou": self.tracker.iou()}
        if self.done:
            info["termination"] = self.termination
            info["final_iou"] = self.tracker.iou()
        return info

    def record(self) -> "EpisodeRecord":
        header = {"target_id": self.target.target_id, "seed": self.seed,
                  "offset_set": self.cfg.offset_set.value, "bounds": self.bounds.to_list(),
                  "budget": self.target.budget, "config_hash": self.cfg.digest()}
        return EpisodeRecord(header, list(self.steps), self.tracker.iou(),
                             self.termination.value if self.termination else None)


@dataclass
class EpisodeRecord:
    header: dict
    steps: list
    final_iou: float
    termination: str | None

    @property
    def actions(self) -> list[BrickAction]:
        return [BrickAction(s.pivot, s.offset) for s in self.steps]

    @property
    def episode_return(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def to_jsonl(self) -> str:
        import io
        buf = io.StringIO()
        head = dict(self.header, final_iou=self.final_iou, termination=self.termination)
        write_log(buf, head, self.steps)
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeRecord":
        head, steps = parse_log(text)
        head = dict(head)
        final = head.pop("final_iou")
        term = head.pop("termination")
        return cls(head, steps, final, term)

    @classmethod
    def load(cls, path: str | Path) -> "EpisodeRecord":
        return cls.from_jsonl(Path(path).read_text())

    def __eq__(self, other):
        return isinstance(other, EpisodeRecord) and self.to_jsonl() == other.to_jsonl()


def replay_record(record: EpisodeRecord, target: TargetInfo, cfg: EnvConfig | None = None):
    """Re-run the logged actions; returns the environment after the last step."""
    if cfg is None:
        bounds = Bounds.from_list(record.header["bounds"])
        # bounds equal to the target's world were implicit in the original run
        cfg = EnvConfig(offset_set=record.header["offset_set"],
                        bounds=None if bounds == target.bounds else bounds)
    env = BrickEnv(cfg)
    env.reset(target, record.header.get("seed"))
    for a in record.actions:
        if env.done:
            break
        env.step(a)
    return env


Policy = Callable[[Observation, np.random.Generator], BrickAction]


def random_policy(obs: Observation, rng: np.random.Generator) -> BrickAction:
    """Uniform pivot among valid pivots, then uniform valid offset."""
    t, k = obs.masks.offset_valid.shape
    a, _ = masked_sample(np.zeros(t), lambda i: np.zeros(k), obs.masks, rng)
    return a


def run_episode(policy: Policy, env: BrickEnv, target: TargetInfo, seed: int | None = None,
                rng: np.random.Generator | None = None) -> EpisodeRecord:
    obs = env.reset(target, seed)
    rng = rng if rng is not None else env.rng
    while not env.done:
        try:
            action = policy(obs, rng)
        except NoValidAction:
            env._finish(Termination.NO_VALID)
            break
        obs, _, _, _ = env.step(action)
    return env.record()
