"""Command-line entry point: simulate, build samples, train, evaluate, ablate, scale.

Every command reads one versioned JSON config, writes its artifacts into
``--out`` and finishes with ``manifest.json`` recording the resolved config
hash, seed, input and output hashes and the tool version. Parallelism knobs
(``--threads``) never change an artifact, so they are left out of the hash.

Failures print a single JSON line on stderr and exit with

* 2 for a config or schema violation,
* 3 for a missing input file,
* 4 for a non-finite training loss,
* 1 for anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .errors import ConfigError, NumericAbort
from .es3 import ES3Config, load_records, save_records
from .harness import (
    BenchmarkConfig,
    HarnessConfig,
    OptimConfig,
    ablation_run,
    benchmark_from_log,
    evaluate_scores,
    scaling_run,
    search_rows,
    train,
)
from .hhsft import HHSFT, ModelConfig, encode_records, write_scores
from .synthlog import EventLog, SimConfig, World, WorldConfig, generate_world, simulate

logger = logging.getLogger("entirespace")

SCHEMA_VERSION = "1"
SECTIONS = ("world", "sim", "es3", "model", "optimizer", "harness")
# benchmark-split keys that live in the harness section of the document
SPLIT_KEYS = ("test_fraction", "test_exposed_only")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _world_from_dict(d):
    unknown = set(d) - set(WorldConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown world key")
    cfg = WorldConfig(**d)
    cfg.validate()
    return cfg


def _sim_from_dict(d):
    cfg = SimConfig.from_dict(d)
    cfg.validate()
    return cfg


def _harness_from_dict(d):
    if "data_seed" in d:
        raise ConfigError("data_seed", "the benchmark seed is the top-level seed")
    return HarnessConfig.from_dict({k: v for k, v in d.items() if k not in SPLIT_KEYS})


_PARSERS = {
    "world": _world_from_dict,
    "sim": _sim_from_dict,
    "es3": ES3Config.from_dict,
    "model": ModelConfig.from_dict,
    "optimizer": OptimConfig.from_dict,
    "harness": _harness_from_dict,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    es3: ES3Config = field(default_factory=ES3Config)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    test_fraction: float = BenchmarkConfig.test_fraction
    test_exposed_only: bool = BenchmarkConfig.test_exposed_only

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        # the version gate runs before anything else is looked at
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"expected {SCHEMA_VERSION!r}, got {d.get('schema_version')!r}")
        unknown = set(d) - {"schema_version", "seed", *SECTIONS}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown top-level key")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        parts = {}
        for sec in SECTIONS:
            body = d.get(sec, {})
            if not isinstance(body, dict):
                raise ConfigError(sec, "section must be a JSON object")
            try:
                parts[sec] = _PARSERS[sec](body)
            except ConfigError as err:
                raise ConfigError(f"{sec}.{err.field}", err.message) from None
            except TypeError as err:
                raise ConfigError(sec, str(err)) from None
        split = {k: d.get("harness", {})[k] for k in SPLIT_KEYS if k in d.get("harness", {})}
        cfg = cls(seed=seed, **parts, **split)
        try:
            cfg.benchmark().validate()
        except ConfigError as err:
            raise ConfigError(f"harness.{err.field}", err.message) from None
        return cfg

    def with_overrides(self, seed=None, threads=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads", "must be >= 1")
            cfg = replace(cfg, es3=replace(cfg.es3, threads=threads), harness=replace(cfg.harness, workers=threads))
        return cfg

    def benchmark(self) -> BenchmarkConfig:
        return BenchmarkConfig(self.world, self.sim, self.es3, self.test_fraction, self.test_exposed_only)

    def harness_run(self) -> HarnessConfig:
        return replace(self.harness, data_seed=self.seed)

    def canonical(self):
        """The resolved document minus parallelism knobs, which never change results."""
        es3 = asdict(self.es3)
        es3.pop("threads")
        harness = asdict(self.harness)
        harness.pop("workers")
        harness.pop("data_seed")
        harness.update(test_fraction=self.test_fraction, test_exposed_only=self.test_exposed_only)
        return {"schema_version": SCHEMA_VERSION, "seed": self.seed, "world": asdict(self.world),
                "sim": asdict(self.sim), "es3": es3, "model": self.model.to_dict(),
                "optimizer": asdict(self.optimizer), "harness": harness}

    def digest(self):
        return _sha256(json.dumps(self.canonical(), sort_keys=True).encode())


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    return path.read_bytes()


def load_config(path) -> tuple[RunConfig, bytes]:
    raw = _read(path)
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ConfigError("<root>", f"invalid JSON: {err.msg} at line {err.lineno}") from None
    return RunConfig.from_dict(doc), raw


class Run:
    """Artifact writer for one command; tracks hashes for the manifest."""

    def __init__(self, command, config: RunConfig, config_bytes: bytes, out_dir):
        self.command = command
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {"config": _sha256(config_bytes)}
        self.outputs = {}

    def read_input(self, name, path) -> bytes:
        data = _read(path)
        self.inputs[name] = _sha256(data)
        return data

    def write(self, name, text: str):
        data = text.encode()
        (self.out / name).write_bytes(data)
        self.outputs[name] = _sha256(data)

    def adopt(self, name):
        """Record a file some library call already wrote into the output directory."""
        self.outputs[name] = _sha256((self.out / name).read_bytes())

    def finish(self):
        manifest = {
            "command": self.command,
            "tool_version": __version__,
            "schema_version": SCHEMA_VERSION,
            "seed": self.config.seed,
            "config_sha256": self.config.digest(),
            "config": self.config.canonical(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return EXIT_OK


def _dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def cmd_gen_logs(run: Run):
    cfg = run.config
    world = generate_world(cfg.world, cfg.seed)
    log = simulate(world, cfg.sim, cfg.seed)
    run.write("world.ndjson", world.to_ndjson())
    run.write("events.ndjson", log.events_ndjson())
    run.write("candidates.ndjson", log.candidates_ndjson())
    logger.info("simulated %d events over %d requests", len(log.events), len(log.candidate_lists))
    return run.finish()


def _load_logs(run: Run, logs_dir):
    logs_dir = Path(logs_dir)
    world_text = run.read_input("world.ndjson", logs_dir / "world.ndjson").decode()
    run.read_input("events.ndjson", logs_dir / "events.ndjson")
    run.read_input("candidates.ndjson", logs_dir / "candidates.ndjson")
    return World.from_ndjson(world_text), EventLog.load(logs_dir / "events.ndjson", logs_dir / "candidates.ndjson")


def cmd_build_samples(run: Run, logs_dir):
    cfg = run.config
    world, log = _load_logs(run, logs_dir)
    bench = benchmark_from_log(cfg.benchmark(), world, log, cfg.seed)
    for name in ("es3", "search_only", "test"):
        records = bench.test if name == "test" else bench.dataset(name)
        save_records(run.out / f"{name}.ndjson", records)
        run.adopt(f"{name}.ndjson")
    run.write("stats.json", bench.stats.to_json())
    logger.info("dataset stats\n%s", bench.stats.table())
    return run.finish()


def _load_dataset(run: Run, path):
    run.read_input(Path(path).name, path)
    return load_records(path)


def cmd_train(run: Run, dataset_path):
    cfg = run.config
    data = encode_records(_load_dataset(run, dataset_path), cfg.model)
    result = train(data, cfg.model, cfg.optimizer, seed=cfg.seed, checkpoint_path=run.out / "model")
    run.adopt("model.json")
    run.adopt("model.bin")
    run.write("train.json", _dumps({"seed": cfg.seed, "steps": result.steps, "n_samples": len(data),
                                    "n_parameters": result.model.n_parameters(), "losses": result.losses}))
    logger.info("trained %d steps, final loss %.5f (%.1fs)", result.steps,
                result.losses[-1] if result.losses else float("nan"), result.wall_time)
    return run.finish()


def cmd_eval(run: Run, checkpoint, dataset_path):
    manifest = Path(checkpoint).with_suffix(".json")
    run.read_input("model.json", manifest)
    run.read_input("model.bin", manifest.with_suffix(".bin"))
    model, _ = HHSFT.load(manifest)
    batch = search_rows(encode_records(_load_dataset(run, dataset_path), model.config))
    scores = model.predict_search(batch)
    write_scores(run.out / "scores.csv", batch, scores)
    run.adopt("scores.csv")
    report = evaluate_scores(batch, scores, run.config.harness.k)
    run.write("metrics.json", _dumps(report.to_dict()))
    logger.info("auc %.4f gauc %.4f hr@%d %.4f", report.auc, report.gauc, run.config.harness.k, report.hr_at_5)
    return run.finish()


def cmd_ablate(run: Run):
    cfg = run.config
    report = ablation_run(cfg.benchmark(), cfg.model, cfg.optimizer, cfg.harness_run())
    run.write("ablation.json", report.to_json())
    run.write("ablation.csv", report.to_csv())
    for r in report.rows:
        logger.info("%-12s %-7s auc %.4f +- %.4f", r.dataset, r.variant, r.auc_mean, r.auc_se)
    return run.finish()


def cmd_scaling(run: Run):
    cfg = run.config
    report = scaling_run(cfg.benchmark(), cfg.model, cfg.optimizer, cfg.harness_run())
    run.write("scaling.json", report.to_json())
    run.write("scaling.csv", report.to_csv())
    for p in report.points:
        logger.info("%-4s x%d %-12s auc %.4f delta %+.4f", p.dim, p.ratio, p.dataset, p.auc_mean, p.delta_auc)
    return run.finish()


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run config JSON")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the config's global seed")
    common.add_argument("--threads", type=int, help="worker count for sample building and experiment grids")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="stderr log verbosity")
    parser = argparse.ArgumentParser(prog="entirespace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"entirespace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-logs", parents=[common], help="simulate a world and its behavior log")
    p = sub.add_parser("build-samples", parents=[common], help="build training and test sets from a log")
    p.add_argument("--logs", required=True, help="directory written by gen-logs")
    p = sub.add_parser("train", parents=[common], help="train one model on a list-wise dataset")
    p.add_argument("--data", required=True, help="list-wise ndjson dataset")
    p = sub.add_parser("eval", parents=[common], help="score a dataset's search rows with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint manifest written by train")
    p.add_argument("--data", required=True, help="list-wise ndjson dataset")
    sub.add_parser("ablate", parents=[common], help="dataset x component ablation over seeds")
    sub.add_parser("scaling", parents=[common], help="width-scaling curves over seeds")
    return parser


def _dispatch(args, run):
    if args.command == "gen-logs":
        return cmd_gen_logs(run)
    if args.command == "build-samples":
        return cmd_build_samples(run, args.logs)
    if args.command == "train":
        return cmd_train(run, args.data)
    if args.command == "eval":
        return cmd_eval(run, args.checkpoint, args.data)
    if args.command == "ablate":
        return cmd_ablate(run)
    return cmd_scaling(run)


def _fail(code, category, message, **extra):
    print(json.dumps({"error": category, "exit": code, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, raw = load_config(args.config)
        cfg = cfg.with_overrides(args.seed, args.threads)
        return _dispatch(args, Run(args.command, cfg, raw, args.out))
    except ConfigError as err:
        return _fail(EXIT_CONFIG, "config", err.message, field=err.field)
    except FileNotFoundError as err:
        return _fail(EXIT_MISSING, "missing_input", "input not found", path=err.filename or str(err))
    except NumericAbort as err:
        return _fail(EXIT_NUMERIC, "numeric_abort", str(err))
    except Exception as err:  # noqa: BLE001  (one parseable line instead of a traceback)
        logger.debug("unhandled error", exc_info=True)
        return _fail(EXIT_ERROR, type(err).__name__, str(err))


if __name__ == "__main__":
    raise SystemExit(main())
