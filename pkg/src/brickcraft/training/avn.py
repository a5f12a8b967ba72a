"""Validity-network data generation, pretraining and evaluation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .. import autodiff as ad
from ..actions import compute_masks
from ..assembly import WORLD32, AssemblyGraph, Bounds
from ..geometry import BrickPose, OffsetSetId, enumerate_offsets
from ..models import ModelConfig, avn_forward, init_avn, make_batch
from ..targets import random_construction
from . import metrics

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class ValidityRecord(NamedTuple):
    graph: AssemblyGraph
    pivot: np.ndarray    # (t,) bool
    offset: np.ndarray   # (t, n_off) bool


@dataclass
class ValidityDataset:
    records: list
    offset_set: OffsetSetId
    size_range: tuple
    split: str = "train"
    bounds: Bounds = WORLD32

    def __len__(self):
        return len(self.records)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"offset_set": self.offset_set.value, "size_range": list(self.size_range),
                                 "split": self.split, "bounds": self.bounds.to_list(),
                                 "count": len(self.records)}) + "\n")
            for r in self.records:
                fh.write(json.dumps({"poses": [p.as_list() for p in r.graph.nodes],
                                     "offset": ["".join("1" if b else "0" for b in row)
                                                for row in r.offset]}) + "\n")

    @classmethod
    def load(cls, path) -> "ValidityDataset":
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        recs = []
        for line in lines[1:]:
            obj = json.loads(line)
            g = AssemblyGraph(BrickPose(*p) for p in obj["poses"])
            off = np.array([[c == "1" for c in row] for row in obj["offset"]], dtype=bool)
            recs.append(ValidityRecord(g, off.any(axis=1), off))
        return cls(recs, OffsetSetId(head["offset_set"]), tuple(head["size_range"]), head["split"],
                   Bounds.from_list(head["bounds"]))


def make_validity_dataset(rng: np.random.Generator, count: int, size_range=(1, 20),
                          offset_set=OffsetSetId.FULL, bounds: Bounds = WORLD32,
                          split: str = "train") -> ValidityDataset:
    """Random valid constructions of uniformly drawn size, labelled by the oracle."""
    offsets = enumerate_offsets(OffsetSetId(offset_set))
    lo, hi = size_range
    records = []
    while len(records) < count:
        n = int(rng.integers(lo, hi + 1))
        built = random_construction(rng, n, offsets, bounds)
        if built is None:
            continue
        g = built[0]
        m = compute_masks(g, offsets, bounds)
        records.append(ValidityRecord(g, m.pivot_valid, m.offset_valid))
    return ValidityDataset(records, OffsetSetId(offset_set), (lo, hi), split, bounds)


@dataclass
class AvnTrainConfig:
    epochs: int = 10
    batch_size: int = 64       # graphs per step
    lr: float = 1e-4
    seed: int = 0
    clip_norm: float = 0.5


def _labels(records):
    piv = np.concatenate([r.pivot for r in records]).astype(np.float32)
    off = np.concatenate([r.offset for r in records]).astype(np.float32)
    return piv, off


def avn_loss(params, cfg: ModelConfig, records) -> ad.Tensor:
    """Mean BCE of the pivot head plus mean BCE of the offset head."""
    out = avn_forward(params, cfg, make_batch([r.graph for r in records]))
    piv, off = _labels(records)
    return ad.add(ad.bce_with_logits(out.pivot_logits, piv), ad.bce_with_logits(out.offset_logits, off))


def train_avn(dataset: ValidityDataset, cfg: ModelConfig, tc: AvnTrainConfig = AvnTrainConfig(),
              params=None, callback=None):
    """Returns (params, per-step loss list)."""
    if not len(dataset):
        raise ValueError("empty validity dataset")
    rng = np.random.default_rng(tc.seed)
    params = params if params is not None else init_avn(cfg, tc.seed)
    opt = ad.Adam(params, lr=tc.lr, clip_norm=tc.clip_norm)
    curve = []
    n = len(dataset)
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        for s in range(0, n, tc.batch_size):
            batch = [dataset.records[i] for i in order[s:s + tc.batch_size]]
            loss = avn_loss(params, cfg, batch)
            val = loss.item()
            if not np.isfinite(val):
                raise TrainingDiverged(f"non-finite AVN loss at epoch {epoch}, step {len(curve)}")
            params.zero_grad()
            ad.backward(loss)
            opt.step()
            curve.append(val)
        log.info("avn epoch %d loss %.4f", epoch, float(np.mean(curve[-max(1, n // tc.batch_size):])))
        if callback:
            callback(epoch, params, curve)
    return params, curve


def avn_scores(params, cfg: ModelConfig, dataset: ValidityDataset, batch_size: int = 256):
    ps, os_ = [], []
    for s in range(0, len(dataset), batch_size):
        chunk = dataset.records[s:s + batch_size]
        pc, oc = avn_forward(params, cfg, make_batch([r.graph for r in chunk])).confidences()
        ps.append(pc)
        os_.append(oc)
    return np.concatenate(ps), np.concatenate(os_)


@dataclass
class AvnMetrics:
    threshold: float
    pivot_precision: float
    pivot_recall: float
    offset_precision: float
    offset_recall: float
    pivot_auc: float
    offset_auc: float
    pivot_ap: float
    offset_ap: float
    curves: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "curves"}

    def write_csv(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        out = []
        for name, c in self.curves.items():
            p = d / f"{name}.csv"
            metrics.write_curve_csv(p, c, ("fpr", "tpr") if name.endswith("roc") else ("recall", "precision"))
            out.append(p)
        return out


def _safe_auc(y, s):
    try:
        return metrics.roc_auc(y, s)
    except ValueError:
        return float("nan")


def score_metrics(piv_y, piv_s, off_y, off_s, threshold: float = 0.5) -> AvnMetrics:
    """Metrics with the valid class as positive."""
    pp, pr = metrics.precision_recall(piv_y, piv_s, threshold)
    op, orr = metrics.precision_recall(off_y, off_s, threshold)
    curves = {"pivot_roc": metrics.roc_curve(piv_y, piv_s), "pivot_pr": metrics.pr_curve(piv_y, piv_s),
              "offset_roc": metrics.roc_curve(off_y, off_s), "offset_pr": metrics.pr_curve(off_y, off_s)}
    return AvnMetrics(threshold, pp, pr, op, orr, _safe_auc(piv_y, piv_s), _safe_auc(off_y, off_s),
                      metrics.average_precision(piv_y, piv_s), metrics.average_precision(off_y, off_s),
                      curves)


def eval_avn(params, cfg: ModelConfig, dataset: ValidityDataset, threshold: float = 0.5) -> AvnMetrics:
    piv_s, off_s = avn_scores(params, cfg, dataset)
    piv_y, off_y = _labels(dataset.records)
    return score_metrics(piv_y.astype(bool), piv_s, off_y.astype(bool), off_s, threshold)
