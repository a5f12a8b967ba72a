"""brickcraft command line: one subcommand per workflow.

Exit status: 0 success, 1 domain error (bad data, invalid config values,
training divergence), 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .actions import compute_masks
from .assembly import WORLD32, AssemblyGraph, Bounds, ConfigError, InvalidAction, initial_graph
from .config import RunConfig, dump_config, load_config
from .env import BrickEnv, EnvConfig, EpisodeRecord, OracleMasks, run_episode
from .enumeration import EnumerationLimit, count_buildings
from .formats import FormatError, read_idx, write_ldraw, write_pgm
from .geometry import OffsetSetId, enumerate_offsets
from .models import AvnMasks, ModelConfig
from .planners import PLANNERS
from .reward import RewardConfig
from .training.avn import TrainingDiverged
from .targets import (_OPEN, EmptyTarget, TargetInfo, gen_random_assembly, load_target, mnist_to_target,
                      project_views, random_construction, save_target, tower_target, voxelize)

log = logging.getLogger("brickcraft")

FORMATS_HELP = """file formats:
  targets index   JSON lines, one target record per line (views as PBM P1,
                  volume as BBVOX1, paths relative to the index file)
  episode record  JSON lines: header line, then one line per step
  validity data   JSON lines: header line, then {"poses", "offset"} per assembly
  checkpoint      BBCKPT1: ASCII manifest followed by little-endian float32 data
  config          INI with [task], [model], [ppo] sections; unknown keys rejected
"""


class DomainError(Exception):
    pass


# -- shared helpers -----------------------------------------------------------

def _save_model(path, params, cfg: ModelConfig, kind: str, extra: dict | None = None):
    meta = {"kind": kind, "model_config": json.dumps(cfg.to_dict())}
    meta.update({k: json.dumps(v) for k, v in (extra or {}).items()})
    ad.save_checkpoint(path, params, meta)


def _load_model(path, kind: str | None = None):
    values, meta = ad.load_checkpoint(path)
    if kind and meta.get("kind") != kind:
        raise DomainError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')!r}")
    cfg = ModelConfig(**json.loads(meta["model_config"]))
    ps = ad.ParamStore()
    for k, v in values.items():
        ps.add(k, v)
    return ps, cfg


def _load_targets(spec: str) -> list[TargetInfo]:
    if spec.startswith("tower"):
        levels = int(spec[5:] or 4)
        return [tower_target(levels)]
    path = Path(spec)
    if not path.exists():
        raise DomainError(f"no such targets file: {spec}")
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            out.append(load_target(json.loads(line), path.parent))
    if not out:
        raise DomainError(f"{spec}: no targets")
    return out


def _env_config(offset_set, gate: float = 0.5, mask=None, invalid_reward: float = 0.0,
                gamma: float = 0.75) -> EnvConfig:
    return EnvConfig(offset_set=offset_set, reward=RewardConfig(gate),
                     mask_source=mask or OracleMasks(), gamma=gamma, invalid_reward=invalid_reward)


def _write_index(directory: Path, records: list[dict]) -> Path:
    idx = directory / "index.jsonl"
    with open(idx, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return idx


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


# -- subcommands -----------------------------------------------------------------

def cmd_enumerate(a):
    levels = count_buildings(a.bricks, a.offset_set, max_keys=a.max_keys, return_levels=True)
    w = csv.writer(sys.stdout)
    w.writerow(["bricks", "buildings"])
    for i, c in enumerate(levels, 1):
        w.writerow([i, c])
    print(levels[-1])


def cmd_gen_assemblies(a):
    rng = np.random.default_rng(a.seed)
    out = Path(a.out)
    recs = []
    for i in range(a.count):
        asm = gen_random_assembly(rng, (a.min_bricks, a.max_bricks), a.offset_set, target_id=f"asm{i:05d}")
        recs.append(save_target(asm.target, out, {"actions": [list(x) for x in asm.actions],
                                                  "offset_set": OffsetSetId(a.offset_set).value}))
    print(_write_index(out, recs))


def cmd_gen_validity(a):
    from .training.avn import make_validity_dataset
    ds = make_validity_dataset(np.random.default_rng(a.seed), a.count, (a.min_bricks, a.max_bricks),
                               a.offset_set, split=a.split)
    ds.save(a.out)
    piv = np.concatenate([r.pivot for r in ds.records])
    off = np.concatenate([r.offset for r in ds.records])
    _print_json({"records": len(ds), "pivot_valid_rate": piv.mean(), "offset_valid_rate": off.mean()})


def cmd_train_avn(a):
    from .training.avn import AvnTrainConfig, ValidityDataset, train_avn
    ds = ValidityDataset.load(a.data)
    cfg = ModelConfig(hidden_dim=a.hidden, gnn_layers=a.layers, n_off=len(enumerate_offsets(ds.offset_set)),
                      message_passing=not a.mlp)
    params, curve = train_avn(ds, cfg, AvnTrainConfig(a.epochs, a.batch_size, a.lr, a.seed))
    _save_model(a.out, params, cfg, "avn", {"offset_set": ds.offset_set.value})
    if a.curve:
        with open(a.curve, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            w.writerows(enumerate(curve))
    _print_json({"final_loss": float(np.mean(curve[-20:])), "steps": len(curve)})


def cmd_eval_avn(a):
    from .training.avn import ValidityDataset, eval_avn
    params, cfg = _load_model(a.checkpoint, "avn")
    m = eval_avn(params, cfg, ValidityDataset.load(a.data), a.threshold)
    if a.out_dir:
        m.write_csv(a.out_dir)
    _print_json(m.summary())


def _ppo_setup(a):
    rc = load_config(a.config) if a.config else RunConfig.for_mode(a.mode)
    if a.total_timesteps:
        rc.ppo.total_timesteps = a.total_timesteps
    targets = _load_targets(a.targets or rc.task.targets or "tower")
    offset_set = rc.task.resolved_offset_set()
    mask = None
    if rc.task.mask == "avn":
        if not rc.task.avn_checkpoint:
            raise ConfigError("mask = avn needs avn_checkpoint")
        p, c = _load_model(rc.task.avn_checkpoint, "avn")
        mask = AvnMasks(p, c, rc.task.threshold)
    env_cfg = _env_config(offset_set, rc.task.gate_fraction, mask, rc.task.invalid_reward, rc.ppo.gamma)
    cfg = rc.model
    n_off = len(enumerate_offsets(offset_set))
    if cfg.n_off != n_off:
        cfg = ModelConfig(**{**cfg.to_dict(), "n_off": n_off})
    return rc, targets, env_cfg, cfg


def cmd_train_ppo(a):
    from .training.ppo import train_ppo
    rc, targets, env_cfg, cfg = _ppo_setup(a)
    seed = a.seed if a.seed is not None else rc.task.seed
    held = targets[a.holdout:] if a.holdout else []
    train = targets[:a.holdout] if a.holdout else targets
    res = train_ppo(lambda: BrickEnv(env_cfg), cfg, rc.ppo, lambda rng: train[int(rng.integers(len(train)))],
                    seed=seed, eval_targets=held)
    _save_model(a.out, res.params, cfg, "policy", {"offset_set": env_cfg.offset_set.value})
    if a.curve:
        res.write_csv(a.curve)
    ious = res.final_ious()
    _print_json({"iterations": len(res.history), "episodes": len(ious),
                 "last50_mean_iou": float(ious[-50:].mean()) if len(ious) else None})


def cmd_train_sl(a):
    from .training.supervised import SlConfig, sl_accuracy, teacher_samples, train_supervised
    from .targets import GeneratedAssembly
    from .assembly import BrickAction
    path = Path(a.targets)
    lines = [x for x in path.read_text().splitlines() if x.strip()]
    if not lines:
        raise DomainError(f"{path}: no targets")
    asms = []
    for line in lines:
        rec = json.loads(line)
        if "actions" not in rec:
            raise DomainError("train-sl needs targets written by gen-assemblies (with actions)")
        t = load_target(rec, path.parent)
        asms.append(GeneratedAssembly(None, t.exact_volume, t, tuple(BrickAction(*x) for x in rec["actions"]),
                                      (), 0))
    offset_set = OffsetSetId(json.loads(lines[0]).get("offset_set", "random_assembly"))
    cfg = ModelConfig.for_task(offset_set.value, hidden_dim=a.hidden)
    samples = teacher_samples(asms, cfg, offset_set)
    params, curve = train_supervised(samples, cfg, SlConfig(a.epochs, a.batch_size, a.lr, a.seed))
    _save_model(a.out, params, cfg, "policy", {"offset_set": offset_set.value})
    _print_json({"samples": len(samples), "final_loss": curve[-1][0], "train_accuracy": sl_accuracy(params, cfg, samples)})


def cmd_eval_policy(a):
    from .training.ppo import PolicyAgent
    params, cfg = _load_model(a.checkpoint, "policy")
    targets = _load_targets(a.targets)
    offset_set = OffsetSetId(a.offset_set) if a.offset_set else targets[0].offset_set_id
    env = BrickEnv(_env_config(offset_set))
    agent = PolicyAgent(params, cfg, greedy=a.greedy)
    out = Path(a.out) if a.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    ious = []
    for i, t in enumerate(targets):
        rec = run_episode(agent, env, t, a.seed + i)
        ious.append(rec.final_iou)
        if out:
            rec.save(out / f"{t.target_id or i}.jsonl")
    _print_json({"targets": len(targets), "mean_iou": float(np.mean(ious))})


def cmd_plan(a):
    targets = _load_targets(a.target)
    t = targets[a.index]
    offset_set = OffsetSetId(a.offset_set) if a.offset_set else t.offset_set_id
    cfg = _env_config(offset_set, a.gate)
    fn = PLANNERS[a.method]
    kw = {"width": a.width} if a.method == "beam" else {}
    if a.method == "bo":
        kw = {"init_points": a.init_points, "budget": a.bo_budget}
    rec = fn(t, cfg, seed=a.seed, **kw)
    if a.out:
        rec.save(a.out)
    _print_json({"target": t.target_id, "method": a.method, "final_iou": rec.final_iou,
                 "bricks": len(rec.steps) + 1, "termination": rec.termination})


def cmd_render(a):
    rec = EpisodeRecord.load(a.record)
    poses = [initial_graph().nodes[0]] + [s.pose for s in rec.steps if s.extra.get("valid", True)]
    write_ldraw(a.out, poses, name=rec.header.get("target_id") or "assembly")
    written = [a.out]
    if a.views_dir:
        d = Path(a.views_dir)
        d.mkdir(parents=True, exist_ok=True)
        bounds = Bounds.from_list(rec.header["bounds"]) if "bounds" in rec.header else WORLD32
        vol = voxelize(AssemblyGraph(poses), bounds)
        for name, v in zip(("front", "right", "top"), project_views(vol)):
            p = d / f"{name}.pgm"
            write_pgm(p, v)
            written.append(str(p))
    print("\n".join(map(str, written)))


def cmd_oracle_bench(a):
    offsets = enumerate_offsets(a.offset_set)
    rng = np.random.default_rng(a.seed)
    bounds = WORLD32 if a.bounded else _OPEN
    w = csv.writer(sys.stdout)
    w.writerow(["t", "naive_ms", "accelerated_ms"])
    for t in a.bricks:
        built = None
        while built is None:
            built = random_construction(rng, t, offsets, bounds)
        g = built[0]
        row = [t]
        for mode in ("naive", "accelerated"):
            best = float("inf")
            for _ in range(a.repeats):
                t0 = time.perf_counter()
                compute_masks(g, offsets, bounds, mode)
                best = min(best, time.perf_counter() - t0)
            row.append(f"{best * 1e3:.4f}")
        w.writerow(row)


def cmd_mnist_targets(a):
    images = read_idx(a.images)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise DomainError(f"expected N x 28 x 28 images, got {images.shape}")
    labels = read_idx(a.labels) if a.labels else None
    out = Path(a.out)
    recs = []
    picked = range(min(a.count, len(images))) if a.count else range(len(images))
    for i in picked:
        try:
            t = mnist_to_target(images[i], target_id=f"mnist{i:05d}")
        except EmptyTarget:
            log.warning("image %d is empty after thresholding; skipped", i)
            continue
        extra = {"label": int(labels[i])} if labels is not None else None
        recs.append(save_target(t, out, extra))
    print(_write_index(out, recs))


def cmd_config(a):
    sys.stdout.write(dump_config(RunConfig.for_mode(a.mode)))


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brickcraft", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=FORMATS_HELP)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=FORMATS_HELP,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(fn=fn)
        return sp

    offset_choices = [o.value for o in OffsetSetId]

    s = add("enumerate", cmd_enumerate, "count distinct N-brick buildings; per-level CSV then the count")
    s.add_argument("--bricks", type=int, required=True)
    s.add_argument("--offset-set", default="full", choices=offset_choices)
    s.add_argument("--max-keys", type=int, default=20_000_000, help="memory guard: buildings per level")

    s = add("gen-assemblies", cmd_gen_assemblies, "generate random-assembly targets into a directory")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--min-bricks", type=int, default=10)
    s.add_argument("--max-bricks", type=int, default=15)
    s.add_argument("--offset-set", default="random_assembly", choices=offset_choices)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory (index.jsonl + PBM/BBVOX1 files)")

    s = add("gen-validity", cmd_gen_validity, "generate an oracle-labelled validity dataset")
    s.add_argument("--count", type=int, default=20_000)
    s.add_argument("--min-bricks", type=int, default=1)
    s.add_argument("--max-bricks", type=int, default=10)
    s.add_argument("--offset-set", default="full", choices=offset_choices)
    s.add_argument("--split", default="train")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="JSON lines file")

    s = add("train-avn", cmd_train_avn, "pretrain the action validity network")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, default=6)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--hidden", type=int, default=192)
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--mlp", action="store_true", help="replace GN layers by node-wise MLPs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--curve", help="loss curve CSV")

    s = add("eval-avn", cmd_eval_avn, "precision/recall/AUC of a validity network; optional ROC/PR CSVs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out-dir")

    for name, fn, help_ in (("train-ppo", cmd_train_ppo, "train the policy with PPO"),):
        s = add(name, fn, help_)
        s.add_argument("--config", help="INI run configuration")
        s.add_argument("--mode", default="tower", choices=["random_assembly", "modelnet", "mnist", "tower"])
        s.add_argument("--targets", help="targets index.jsonl, or towerN")
        s.add_argument("--holdout", type=int, default=0, help="use targets after the first K for evaluation")
        s.add_argument("--total-timesteps", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", required=True)
        s.add_argument("--curve", help="per-iteration CSV")

    s = add("train-sl", cmd_train_sl, "supervised baseline on generating sequences")
    s.add_argument("--targets", required=True, help="index.jsonl from gen-assemblies")
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--hidden", type=int, default=192)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = add("eval-policy", cmd_eval_policy, "run a trained policy on targets")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--targets", required=True)
    s.add_argument("--offset-set", choices=offset_choices)
    s.add_argument("--greedy", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for episode records")

    s = add("plan", cmd_plan, "run a volume-oracle planner on one target")
    s.add_argument("--method", required=True, choices=sorted(PLANNERS))
    s.add_argument("--target", required=True, help="targets index.jsonl, or towerN")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--width", type=int, default=8)
    s.add_argument("--init-points", type=int, default=5)
    s.add_argument("--bo-budget", type=int, default=10)
    s.add_argument("--offset-set", choices=offset_choices)
    s.add_argument("--gate", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="episode record path")

    s = add("render", cmd_render, "export an episode's final assembly to LDraw and PGM views")
    s.add_argument("--record", required=True)
    s.add_argument("--out", required=True, help=".ldr path")
    s.add_argument("--views-dir")

    s = add("oracle-bench", cmd_oracle_bench, "time naive and accelerated mask computation")
    s.add_argument("--bricks", type=int, nargs="+", default=[10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
                   help="assembly sizes t to time")
    s.add_argument("--offset-set", default="full", choices=offset_choices)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--bounded", action="store_true", help="use the 32^3 world instead of open space")
    s.add_argument("--seed", type=int, default=0)

    s = add("mnist-targets", cmd_mnist_targets, "convert IDX images into MNIST targets")
    s.add_argument("--images", required=True)
    s.add_argument("--labels")
    s.add_argument("--count", type=int, default=0, help="0 = all")
    s.add_argument("--out", required=True)

    s = add("config", cmd_config, "print the default INI configuration for a mode")
    s.add_argument("--mode", default="random_assembly", choices=["random_assembly", "modelnet", "mnist", "tower"])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (DomainError, ConfigError, FormatError, InvalidAction, EnumerationLimit, EmptyTarget,
            TrainingDiverged, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"brickcraft {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
