"""Deterministic mini-batch training and search-domain evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import nncore as nn
from ..errors import ConfigError, NumericAbort, UndefinedMetricError
from ..hhsft import HHSFT, ModelConfig
from ..synthlog import Domain
from .metrics import auc, gauc_report, hitrate_at_k, rank_requests

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 256
    epochs: int = 6
    steps: int | None = None       # overrides epochs when set
    log_every: int = 0

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown optimizer key")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        cfg = cls(**d)
        if cfg.lr <= 0:
            raise ConfigError("lr", "must be > 0")
        if cfg.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if cfg.steps is not None and cfg.steps < 0:
            raise ConfigError("steps", "must be >= 0")
        return cfg


@dataclass
class TrainRun:
    config: dict
    seed: int
    losses: list = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str | None = None
    model: HHSFT | None = field(default=None, repr=False, compare=False)

    @property
    def steps(self):
        return len(self.losses)

    def to_dict(self):
        return {"config": self.config, "seed": self.seed, "steps": self.steps, "losses": self.losses,
                "wall_time": self.wall_time, "checkpoint": self.checkpoint}


def batch_order(n, batch_size, seed, steps=None, epochs=1):
    """Row indices per step: a fresh seeded permutation each epoch, last partial batch kept."""
    rng = np.random.default_rng([seed, 0x0DE7])
    total = steps if steps is not None else epochs * math.ceil(n / batch_size)
    out = []
    while len(out) < total:
        perm = rng.permutation(n)
        for s in range(0, n, batch_size):
            out.append(perm[s:s + batch_size])
            if len(out) == total:
                break
    return out


def train(dataset, model_config: ModelConfig, opt_config: OptimConfig = OptimConfig(), seed=0,
          checkpoint_path=None) -> TrainRun:
    """Fit an HHSFT model with Adam on mean per-batch BCE.

    Initialization, batch order and reduction order all derive from ``seed``.
    A non-finite loss aborts with :class:`NumericAbort` naming the step.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset", "training set is empty")
    t0 = time.perf_counter()
    model = HHSFT(model_config, seed=seed)
    params = model.parameters()
    opt = nn.Adam(params, lr=opt_config.lr, betas=opt_config.betas, eps=opt_config.eps,
                  weight_decay=opt_config.weight_decay)
    run = TrainRun({"model": model_config.to_dict(), "optimizer": asdict(opt_config)}, int(seed))
    for step, idx in enumerate(batch_order(len(dataset), opt_config.batch_size, seed,
                                           opt_config.steps, opt_config.epochs)):
        batch = dataset.subset(idx)
        with nn.Tape() as tape:
            loss = model.loss(batch, reduction="mean")
        value = float(loss.value)
        if not math.isfinite(value):
            raise NumericAbort(step)
        nn.backward(tape, loss, params)
        opt.step()
        run.losses.append(value)
        if opt_config.log_every and step % opt_config.log_every == 0:
            logger.info("step %d loss %.6f", step, value)
    run.wall_time = time.perf_counter() - t0
    if checkpoint_path is not None:
        model.save(checkpoint_path, meta={"seed": int(seed), "steps": run.steps})
        run.checkpoint = str(checkpoint_path)
    run.model = model
    return run


@dataclass
class MetricReport:
    auc: float
    gauc: float
    hr_at_5: float
    group_count: int
    excluded_group_count: int
    n_samples: int
    deltas: dict = field(default_factory=dict)
    dataset_stats: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def search_rows(batch):
    return batch.subset(np.flatnonzero(batch.domain == int(Domain.SEARCH)))


def evaluate_scores(batch, scores, k=5):
    """Metrics of ``scores`` on the search-domain rows of ``batch``."""
    keep = batch.domain == int(Domain.SEARCH)
    s = np.asarray(scores)[keep]
    b = batch.subset(np.flatnonzero(keep))
    y = b.click
    g = gauc_report(s, y, np.stack([b.user_id, b.query_id], axis=1))
    rankings, positives = rank_requests(b.request_id, b.item_id, s, y)
    try:
        hr = hitrate_at_k(rankings, positives, k)
    except UndefinedMetricError:
        hr = float("nan")
    return MetricReport(auc(s, y), g.value, hr, g.group_count, g.excluded_group_count, len(b))


def evaluate(model: HHSFT, batch, k=5):
    """Search-head scores on the search-domain rows, summarized as a :class:`MetricReport`."""
    b = search_rows(batch)
    return evaluate_scores(b, model.predict_search(b), k)
