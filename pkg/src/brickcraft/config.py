"""INI run configuration; PPO keys follow the hyperparameter table wording."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .assembly import ConfigError
from .geometry import OffsetSetId
from .models import ModelConfig
from .training.ppo import PpoConfig

# table wording -> PpoConfig field
PPO_KEYS = {
    "gradient_clipping": "max_grad_norm",
    "entropy_coefficient": "ent_coef",
    "timesteps": "n_steps",
    "total_timesteps": "total_timesteps",
    "environments": "n_envs",
    "learning_rate": "lr",
    "gamma": "gamma",
    "lambda": "lam",
    "epochs": "epochs",
    "minibatches": "minibatches",
    "value_coefficient": "vf_coef",
    "clip_epsilon": "clip_eps",
    "normalize_advantages": "normalize_adv",
    "eval_every": "eval_every",
}

TASK_KEYS = {"mode", "offset_set", "seed", "gate_fraction", "mask", "avn_checkpoint", "threshold",
             "invalid_reward", "targets", "jobs"}


@dataclass
class TaskConfig:
    mode: str = "random_assembly"     # random_assembly | modelnet | mnist | tower
    offset_set: str = ""              # empty: follow the mode
    seed: int = 0
    gate_fraction: float = 0.5
    mask: str = "oracle"              # oracle | avn
    avn_checkpoint: str = ""
    threshold: float = 0.5
    invalid_reward: float = 0.0
    targets: str = ""
    jobs: int = 1

    def resolved_offset_set(self) -> OffsetSetId:
        if self.offset_set:
            return OffsetSetId(self.offset_set)
        return {"mnist": OffsetSetId.MNIST, "modelnet": OffsetSetId.MODELNET,
                "random_assembly": OffsetSetId.RANDOM_ASSEMBLY, "tower": OffsetSetId.FULL}[self.mode]


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    @classmethod
    def for_mode(cls, mode: str) -> "RunConfig":
        task = TaskConfig(mode=mode)
        key = "full" if mode == "tower" else mode
        ppo = PpoConfig.mnist() if mode == "mnist" else PpoConfig()
        return cls(task, ModelConfig.for_task(key), ppo)


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value.strip()


def _apply(obj, items: dict, allowed: dict, section: str):
    updates = {}
    for key, raw in items.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        name = allowed[key]
        try:
            updates[name] = _coerce(raw, getattr(obj, name))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for sec in cp.sections():
        if sec not in ("task", "model", "ppo"):
            raise ConfigError(f"unknown section [{sec}]")
    task_items = dict(cp["task"]) if cp.has_section("task") else {}
    mode = task_items.get("mode", "random_assembly").strip()
    if mode not in ("random_assembly", "modelnet", "mnist", "tower"):
        raise ConfigError(f"unknown mode {mode!r}")
    cfg = base or RunConfig.for_mode(mode)
    task = _apply(cfg.task, task_items, {k: k for k in TASK_KEYS}, "task")
    model = cfg.model
    if cp.has_section("model"):
        model = _apply(model, dict(cp["model"]), {f.name: f.name for f in fields(ModelConfig)}, "model")
    ppo = cfg.ppo
    if cp.has_section("ppo"):
        ppo = _apply(ppo, dict(cp["ppo"]), PPO_KEYS, "ppo")
    if task.mask not in ("oracle", "avn"):
        raise ConfigError(f"mask must be oracle or avn, got {task.mask!r}")
    return RunConfig(task, model, ppo)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = ["[task]"]
    lines += [f"{f.name} = {getattr(cfg.task, f.name)}" for f in fields(TaskConfig)]
    lines += ["", "[model]"]
    for f in fields(ModelConfig):
        v = getattr(cfg.model, f.name)
        lines.append(f"{f.name} = {' '.join(map(str, v)) if isinstance(v, tuple) else v}")
    lines += ["", "[ppo]"]
    lines += [f"{k} = {getattr(cfg.ppo, v)}" for k, v in PPO_KEYS.items()]
    return "\n".join(lines) + "\n"
