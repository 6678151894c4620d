"""Command-line entry point: ``litkg <command> [flags]``.

Commands: synth, build-kg, pretrain, finetune, evaluate, ablate. A JSON config
file (``--config``) is read first and individual flags override it. Exit
codes: 1 config error, 2 I/O error, 3 training divergence; errors are also
written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import statistics
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import AGGREGATORS, LITERAL_MODES, ConfigError, ExperimentConfig
from .ingest import AttributeVectors, NumericStats, build_kg, parse_records, write_records
from .ingest.records import RecordError
from .kg import KnowledgeGraph
from .model.params import CheckpointError, ModelParams
from .pipeline import Dataset, evaluate, finetune, prepare_dataset, pretrain, run_experiment
from .synthgen import SIGNAL_MODES, SynthConfig, SynthConfigError, generate
from .training import TrainingDivergence

log = logging.getLogger("litkg")

EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 1, 2, 3
SCENARIOS = ("literals", "residual", "pretrain", "depth")
DEPTHS = (1, 2, 3, 4)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- config resolution ------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file first, then flag overrides."""
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    model = cfg.model
    changes = {}
    if args.aggregator is not None:
        changes["aggregator"] = args.aggregator
    if args.layers is not None:
        changes["n_layers"] = args.layers
    if args.residual is not None:
        changes["residual_identity"] = args.residual == "on"
    if changes:
        model = dataclasses.replace(model, **changes)
    top = {"model": model}
    for name in ("seed", "pretrained", "out", "kg", "records"):
        value = getattr(args, name, None)
        if value is not None:
            top[name] = value
    cfg = dataclasses.replace(cfg, **top)
    if args.literals is not None:
        cfg = cfg.with_literals(args.literals)
    return cfg


def load_kg(cfg: ExperimentConfig) -> KnowledgeGraph:
    if cfg.kg:
        path = Path(cfg.kg)
        if path.is_dir():
            path = path / "kg.json"
        if not path.is_file():
            raise CliError(f"knowledge graph {path} not found", EXIT_IO)
        return KnowledgeGraph.load(path)
    if cfg.records:
        if not Path(cfg.records).is_file():
            raise CliError(f"records file {cfg.records} not found", EXIT_IO)
        return build_kg(parse_records(cfg.records))
    raise ConfigError("set 'kg' or 'records' in the config or pass --kg/--records")


def _out_dir(cfg: ExperimentConfig) -> Path:
    if not cfg.out:
        raise ConfigError("an output directory is required (--out)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoint(path) -> tuple[ModelParams, dict]:
    if not Path(path).exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return ModelParams.load(path)


def _check_compatible(params: ModelParams, ds: Dataset) -> None:
    if "entity" not in params or params["entity"].shape[0] != len(ds.kg):
        raise CheckpointError("checkpoint entity table does not match the knowledge graph")


def _save_checkpoint(params: ModelParams, directory: Path, cfg: ExperimentConfig, phase: str):
    params.save(directory, {"phase": phase, "config": cfg.to_dict()})


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    lo, hi = args.records_per_animal
    cfg = SynthConfig(n_animals=args.animals, records_per_animal=(lo, hi),
                      n_diseases=args.diseases, n_symptom_vocab=args.vocab,
                      seed=args.seed if args.seed is not None else 0,
                      signal_mode=args.signal_mode)
    try:
        records = generate(cfg)
    except SynthConfigError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records(records, out)
    print(json.dumps({"records": len(records), "animals": cfg.n_animals, "path": str(out)}))
    return 0


def cmd_build_kg(args) -> int:
    if not Path(args.records).is_file():
        raise CliError(f"records file {args.records} not found", EXIT_IO)
    report: list = []
    records = parse_records(args.records, report=report)
    kg = build_kg(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kg.save(out / "kg.json")
    # Inspection sidecar; training re-fits numeric ranges on its own split.
    stats = NumericStats.fit(records)
    AttributeVectors.encode(kg, stats).save(out / "attributes.json")
    _write_json(out / "ingest_report.json", {"records": len(records), "malformed": report,
                                             "entities": len(kg), "triples": len(kg.triples)})
    print(json.dumps({"entities": len(kg), "triples": len(kg.triples),
                      "malformed": len(report)}))
    return 0


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    ds = prepare_dataset(load_kg(cfg), cfg)
    with open(out / "history.jsonl", "w", encoding="utf-8") as hist:
        params, result = _guarded(lambda: pretrain(ds, cfg, history_out=hist), out, cfg)
    _save_checkpoint(params, out / "checkpoint", cfg, "pretrain")
    cfg.save(out / "config.json")
    print(json.dumps({"checkpoint": str(out / "checkpoint"), "best_epoch": result.best_epoch}))
    return 0


def cmd_finetune(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    ds = prepare_dataset(load_kg(cfg), cfg)
    start = None
    if cfg.pretrained:
        start, _ = _load_checkpoint(cfg.pretrained)
        _check_compatible(start, ds)
    with open(out / "history.jsonl", "w", encoding="utf-8") as hist:
        if start is None and cfg.use_pretrain:
            result = _guarded(lambda: run_experiment(ds, cfg, history_out=hist), out, cfg)
            params = result.params
        else:
            params, _ = _guarded(lambda: finetune(ds, cfg, start, history_out=hist), out, cfg)
    _save_checkpoint(params, out / "checkpoint", cfg, "finetune")
    cfg.save(out / "config.json")
    reports = evaluate(ds, cfg, params)
    _write_json(out / "metrics.json", reports["test"].to_dict())
    _write_json(out / "metrics_splits.json", {k: v.to_dict() for k, v in reports.items()})
    print(json.dumps(reports["test"].to_dict(), sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    params, manifest = _load_checkpoint(args.checkpoint)
    if "config" not in manifest:
        raise CheckpointError(f"checkpoint {args.checkpoint} carries no config")
    cfg = ExperimentConfig.from_dict(manifest["config"])
    if args.kg or args.records:
        cfg = dataclasses.replace(cfg, kg=args.kg or cfg.kg, records=args.records or cfg.records)
    ds = prepare_dataset(load_kg(cfg), cfg)
    _check_compatible(params, ds)
    report = evaluate(ds, cfg, params, splits=[args.split])[args.split].to_dict()
    if args.out:
        _write_json(Path(args.out), report)
    print(json.dumps(report, sort_keys=True))
    return 0


def scenario_cells(scenario: str, base: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    if scenario == "literals":
        return [(mode, base.with_literals(mode)) for mode in LITERAL_MODES]
    if scenario == "residual":
        return [(name, dataclasses.replace(base, model=dataclasses.replace(
            base.model, residual_identity=flag))) for name, flag in (("off", False), ("on", True))]
    if scenario == "pretrain":
        return [(name, dataclasses.replace(base, use_pretrain=flag))
                for name, flag in (("scratch", False), ("pretrained", True))]
    if scenario == "depth":
        return [(f"K={k}", dataclasses.replace(base, model=dataclasses.replace(base.model, n_layers=k)))
                for k in DEPTHS]
    raise ConfigError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")


def run_ablation(scenario: str, base: ExperimentConfig, kg: KnowledgeGraph,
                 seeds: Sequence[int]) -> tuple[list[dict], list[dict]]:
    """Every cell of ``scenario`` over ``seeds``; returns (runs, summary rows)."""
    runs = []
    for cell, cfg in scenario_cells(scenario, base):
        for seed in seeds:
            cell_cfg = dataclasses.replace(cfg, seed=seed)
            ds = prepare_dataset(kg, cell_cfg)
            result = run_experiment(ds, cell_cfg)
            runs.append({"scenario": scenario, "cell": cell, "seed": seed,
                         **{k: v for k, v in result.metrics_json().items()
                            if k in ("acc", "precision", "recall", "f1")}})
            log.info("ablate %s %s seed %d f1 %.4f", scenario, cell, seed, runs[-1]["f1"])
    rows = []
    for cell, _ in scenario_cells(scenario, base):
        cell_runs = [r for r in runs if r["cell"] == cell]
        row = {"scenario": scenario, "cell": cell, "n_seeds": len(cell_runs)}
        for metric in ("acc", "precision", "recall", "f1"):
            values = [r[metric] for r in cell_runs]
            row[f"{metric}_mean"] = statistics.fmean(values)
            row[f"{metric}_sd"] = statistics.stdev(values) if len(values) > 1 else 0.0
        rows.append(row)
    return runs, rows


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    if len(args.seeds) < 3:
        raise ConfigError("ablations need at least 3 seeds")
    if args.scenario == "residual" and cfg.model.embed_dim != cfg.model.hidden_dim:
        raise ConfigError("the residual scenario needs embed_dim == hidden_dim")
    kg = load_kg(cfg)
    runs, rows = run_ablation(args.scenario, cfg, kg, args.seeds)
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    with open(out / "ablation_runs.jsonl", "w", encoding="utf-8") as fh:
        for r in runs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    for row in rows:
        print(f"{row['cell']:>10}  f1 {row['f1_mean']:.4f} +/- {row['f1_sd']:.4f}")
    return 0


def _guarded(fn, out: Path, cfg: ExperimentConfig):
    """Run ``fn``; on divergence save the last good parameters before failing."""
    try:
        return fn()
    except TrainingDivergence as exc:
        _save_checkpoint(exc.params, out / "checkpoint_last_good", cfg, "diverged")
        raise


# -- argument parsing -------------------------------------------------------

def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--aggregator", choices=AGGREGATORS)
    p.add_argument("--layers", type=int)
    p.add_argument("--residual", choices=("on", "off"))
    p.add_argument("--literals", choices=tuple(LITERAL_MODES))
    p.add_argument("--pretrained", help="checkpoint directory to initialise from")
    p.add_argument("--kg", help="kg.json (or a build-kg output directory)")
    p.add_argument("--records", help="CSV/JSONL records, built into a graph on the fly")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="litkg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic record corpus")
    p.add_argument("--animals", type=int, default=100)
    p.add_argument("--diseases", type=int, default=10)
    p.add_argument("--vocab", type=int, default=40)
    p.add_argument("--records-per-animal", type=int, nargs=2, default=(1, 3),
                   metavar=("LO", "HI"))
    p.add_argument("--signal-mode", choices=SIGNAL_MODES, default="literal_dependent")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output .csv or .jsonl file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-kg", help="build the knowledge graph from records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_build_kg)

    for name, func, text in (("pretrain", cmd_pretrain, "run the triplet ranking pretext task"),
                             ("finetune", cmd_finetune, "train the diagnosis classifier")):
        p = sub.add_parser(name, help=text)
        _experiment_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a fine-tuned checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--kg")
    p.add_argument("--records")
    p.add_argument("--out", help="write the metrics JSON here as well")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run an ablation scenario over several seeds")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    _experiment_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        code, kind, msg = exc.code, "io_error" if exc.code == EXIT_IO else "error", str(exc)
    except (ConfigError, SynthConfigError) as exc:
        code, kind, msg = EXIT_CONFIG, "config_error", str(exc)
    except TrainingDivergence as exc:
        code, kind, msg = EXIT_DIVERGED, "training_divergence", str(exc)
    except (OSError, RecordError) as exc:
        code, kind, msg = EXIT_IO, "io_error", str(exc)
    print(json.dumps({"error": kind, "message": msg, "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
