"""Seeded experiment grids: the dataset x component ablation and the width-scaling curves.

Every cell is a pure function of (benchmark config, model config, optimizer
config, seed), so cells may run in worker processes and still produce the
same numbers in the same report order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..errors import ConfigError
from ..hhsft import ModelConfig, encode_records
from .bench import BenchmarkConfig, make_benchmark
from .train import OptimConfig, evaluate, train

logger = logging.getLogger(__name__)

MODEL_VARIANTS = {
    "HHFI": dict(use_dref=False, use_dapga=False),
    "+DREF": dict(use_dref=True, use_dapga=False),
    "+DAPGA": dict(use_dref=False, use_dapga=True),
    "+both": dict(use_dref=True, use_dapga=True),
}
DATASET_VARIANTS = ("search_only", "es3")


@dataclass(frozen=True)
class HarnessConfig:
    seeds: tuple = tuple(range(10))
    dataset_variants: tuple = DATASET_VARIANTS
    model_variants: tuple = tuple(MODEL_VARIANTS)
    scale_ratios: tuple = (1, 2, 4)
    scale_dims: tuple = ("d_H", "d_G")
    scale_model_variant: str = "+both"
    data_seed: int = 0
    workers: int = 1
    k: int = 5

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown harness key")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        cfg = cls(**d)
        for v in cfg.model_variants + (cfg.scale_model_variant,):
            if v not in MODEL_VARIANTS:
                raise ConfigError("model_variants", f"unknown model variant {v!r}")
        for v in cfg.dataset_variants:
            if v not in DATASET_VARIANTS:
                raise ConfigError("dataset_variants", f"unknown dataset variant {v!r}")
        for dim in cfg.scale_dims:
            if dim not in ("d_H", "d_G"):
                raise ConfigError("scale_dims", f"can only scale d_H or d_G, not {dim!r}")
        if not cfg.seeds:
            raise ConfigError("seeds", "need at least one seed")
        if cfg.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        return cfg


@dataclass(frozen=True)
class CellSpec:
    dataset: str
    variant: str
    seed: int
    model: ModelConfig
    tag: str = ""


@dataclass
class CellResult:
    dataset: str
    variant: str
    seed: int
    tag: str
    auc: float
    gauc: float
    hr_at_5: float
    group_count: int
    excluded_group_count: int
    n_params: int
    steps: int
    final_loss: float


# Benchmark arrays per worker process, keyed by what determines them.
_CACHE: dict = {}


def _encoded(bench_config: BenchmarkConfig, data_seed, model: ModelConfig):
    key = (json.dumps(bench_config.to_dict(), sort_keys=True), data_seed, model.blocks, model.user_table)
    hit = _CACHE.get(key)
    if hit is None:
        _CACHE.clear()
        bench = make_benchmark(bench_config, data_seed)
        hit = {name: encode_records(bench.dataset(name), model) for name in DATASET_VARIANTS}
        hit["test"] = encode_records(bench.test, model)
        hit["stats"] = bench.stats.to_dict()
        _CACHE[key] = hit
    return hit


def run_cell(bench_config, data_seed, opt: OptimConfig, spec: CellSpec, k=5) -> CellResult:
    data = _encoded(bench_config, data_seed, spec.model)
    run = train(data[spec.dataset], spec.model, opt, seed=spec.seed)
    rep = evaluate(run.model, data["test"], k)
    return CellResult(spec.dataset, spec.variant, spec.seed, spec.tag, rep.auc, rep.gauc, rep.hr_at_5,
                      rep.group_count, rep.excluded_group_count, run.model.n_parameters(), run.steps,
                      run.losses[-1] if run.losses else float("nan"))


def _run_cell_args(args):
    return run_cell(*args)


def run_cells(bench_config, harness: HarnessConfig, opt, specs):
    """Evaluate ``specs`` (in parallel when ``harness.workers > 1``); results keep spec order."""
    jobs = [(bench_config, harness.data_seed, opt, s, harness.k) for s in specs]
    if harness.workers == 1:
        out = []
        for i, job in enumerate(jobs):
            out.append(_run_cell_args(job))
            logger.info("cell %d/%d %s %s seed=%d auc=%.4f", i + 1, len(jobs), job[3].dataset,
                        job[3].variant + job[3].tag, job[3].seed, out[-1].auc)
        return out
    # cells sharing a model config land next to each other so worker caches stay warm
    with ProcessPoolExecutor(harness.workers) as pool:
        return list(pool.map(_run_cell_args, jobs, chunksize=max(1, len(jobs) // (4 * harness.workers))))


def mean_se(values):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class AblationRow:
    dataset: str
    variant: str
    n_seeds: int
    auc_mean: float
    auc_se: float
    gauc_mean: float
    gauc_se: float
    hr_at_5_mean: float
    delta_auc: float
    delta_gauc: float
    excluded_group_count: int
    group_count: int


@dataclass
class AblationReport:
    rows: list
    cells: list
    dataset_stats: dict = field(default_factory=dict)

    def row(self, dataset, variant):
        for r in self.rows:
            if r.dataset == dataset and r.variant == variant:
                return r
        raise KeyError((dataset, variant))

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows], "cells": [asdict(c) for c in self.cells],
                "dataset_stats": self.dataset_stats}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self):
        return _csv([asdict(r) for r in self.rows])


def _csv(rows):
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def ablation_run(bench_config: BenchmarkConfig, base_model: ModelConfig, opt: OptimConfig,
                 harness: HarnessConfig = HarnessConfig()) -> AblationReport:
    """Every (dataset, model variant) cell over every seed, summarized against (search_only, HHFI)."""
    specs = [CellSpec(ds, v, s, replace(base_model, **MODEL_VARIANTS[v]).validate())
             for ds in harness.dataset_variants for v in harness.model_variants for s in harness.seeds]
    cells = run_cells(bench_config, harness, opt, specs)
    groups = {}
    for c in cells:
        groups.setdefault((c.dataset, c.variant), []).append(c)
    ref = groups.get(("search_only", "HHFI"))
    ref_auc = mean_se([c.auc for c in ref])[0] if ref else float("nan")
    ref_gauc = mean_se([c.gauc for c in ref])[0] if ref else float("nan")
    rows = []
    for (ds, v), cs in groups.items():
        a, ase = mean_se([c.auc for c in cs])
        g, gse = mean_se([c.gauc for c in cs])
        rows.append(AblationRow(ds, v, len(cs), a, ase, g, gse, mean_se([c.hr_at_5 for c in cs])[0],
                                a - ref_auc, g - ref_gauc, cs[0].excluded_group_count, cs[0].group_count))
    stats = _encoded(bench_config, harness.data_seed, base_model)["stats"]
    return AblationReport(rows, cells, stats)


@dataclass
class ScalingPoint:
    dim: str
    dataset: str
    ratio: int
    n_params: int
    auc_mean: float
    auc_se: float
    delta_auc: float
    delta_se: float


@dataclass
class ScalingReport:
    points: list
    cells: list

    def point(self, dim, dataset, ratio):
        for p in self.points:
            if (p.dim, p.dataset, p.ratio) == (dim, dataset, ratio):
                return p
        raise KeyError((dim, dataset, ratio))

    def gap(self, dim, ratio, a="es3", b="search_only"):
        return self.point(dim, a, ratio).auc_mean - self.point(dim, b, ratio).auc_mean

    def to_dict(self):
        return {"points": [asdict(p) for p in self.points], "cells": [asdict(c) for c in self.cells]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self):
        return _csv([asdict(p) for p in self.points])


def scaling_run(bench_config: BenchmarkConfig, base_model: ModelConfig, opt: OptimConfig,
                harness: HarnessConfig = HarnessConfig()) -> ScalingReport:
    """Width curves: each of ``scale_dims`` times each ratio, per dataset variant.

    The 1x point is shared by both curves of a dataset. ``delta_auc`` is
    relative to that point, paired by seed.
    """
    base = replace(base_model, **MODEL_VARIANTS[harness.scale_model_variant])
    configs = {}
    for dim in harness.scale_dims:
        for r in harness.scale_ratios:
            configs[(dim, r)] = base if r == 1 else replace(base, **{dim: getattr(base, dim) * r}).validate()
    specs, keys = [], []
    for ds in harness.dataset_variants:
        for (dim, r), cfg in configs.items():
            if r == 1 and dim != harness.scale_dims[0]:
                continue  # reuse the shared baseline cells
            for s in harness.seeds:
                specs.append(CellSpec(ds, harness.scale_model_variant, s, cfg, f"@{dim}x{r}"))
                keys.append((dim, ds, r))
    cells = run_cells(bench_config, harness, opt, specs)
    by = {}
    for key, c in zip(keys, cells):
        by.setdefault(key, []).append(c)
    points = []
    for ds in harness.dataset_variants:
        base_cells = by[(harness.scale_dims[0], ds, 1)]
        base_auc = np.array([c.auc for c in base_cells])
        for dim in harness.scale_dims:
            for r in harness.scale_ratios:
                cs = base_cells if r == 1 else by[(dim, ds, r)]
                a = np.array([c.auc for c in cs])
                m, se = mean_se(a)
                dm, dse = mean_se(a - base_auc)
                points.append(ScalingPoint(dim, ds, r, cs[0].n_params, m, se, dm, dse))
    return ScalingReport(points, cells)
