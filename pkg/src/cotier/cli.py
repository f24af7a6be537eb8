"""Command-line interface.

Subcommands mirror the pipeline stages (generate, train-source, partition,
adapt, coteach, evaluate) plus two report-producing drivers (experiment,
sweep-n) that write metrics CSVs with rendered figures alongside.

Exit codes: 0 on success, 1 for configuration errors (bad flags, bad config
file, unknown preset), 2 for runtime or numeric failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import clustering, encoder, pipeline, report, synthdata
from .config import RunConfig
from .errors import ConfigError, CotierError

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = "0,1,2,3,4"
DEFAULT_SWEEP = "2,3,4,5,6"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="JSON config; flags override its values")
    parser.add_argument("--n", type=int)
    parser.add_argument("--rounds", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--margin", type=float)
    parser.add_argument("--p", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--keep-rate", dest="keep_rate", type=float)
    parser.add_argument("--eps0", type=float)
    parser.add_argument("--eps-decay", dest="eps_decay", type=float)
    parser.add_argument("--eps-percentile", dest="eps_percentile", type=float)
    parser.add_argument("--min-pts", dest="min_pts", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--steps-per-round", dest="steps_per_round", type=int)
    parser.add_argument("--source-steps", dest="source_steps", type=int)
    parser.add_argument("--finetune-steps", dest="finetune_steps", type=int)
    parser.add_argument("--early-stop-patience", dest="early_stop_patience", type=int)
    parser.add_argument("--mean-teaching", dest="mean_teaching", action=argparse.BooleanOptionalAction)
    parser.add_argument("--selection-uses-ema", dest="selection_uses_ema", action=argparse.BooleanOptionalAction)
    parser.add_argument("--repartition", action=argparse.BooleanOptionalAction)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--preset", choices=sorted(synthdata.PRESETS))


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) plus explicit flag overrides, validated."""
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    return base.replace(**overrides)


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}") from err
    if not values:
        raise ConfigError(f"{flag} expects at least one integer")
    return values


def _out_dir(path_str: str) -> Path:
    path = Path(path_str)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args.out_dir)
    source, target = synthdata.make_benchmark(cfg.preset, cfg.seed)
    synthdata.save_dataset(source, out / "source.json")
    synthdata.save_dataset(target, out / "target.json")
    print(f"wrote {out / 'source.json'} ({len(source)} samples) and {out / 'target.json'} ({len(target)} samples)")
    return 0


def cmd_train_source(args) -> int:
    cfg = resolve_config(args)
    dataset = synthdata.load_dataset(args.data)
    params = pipeline.train_source(dataset, cfg)
    encoder.save_checkpoint(params, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_partition(args) -> int:
    cfg = resolve_config(args)
    dataset = synthdata.load_dataset(args.data)
    params = encoder.load_checkpoint(args.checkpoint)
    view = pipeline.make_train_view(dataset)
    partition = pipeline.build_partition(view, params, cfg)
    clustering.save_partition(partition, args.out)
    sizes = ", ".join(f"T{i + 1}={len(t)}" for i, t in enumerate(partition.tiers))
    print(f"wrote {args.out} ({sizes})")
    return 0


def cmd_adapt(args) -> int:
    cfg = resolve_config(args)
    dataset = synthdata.load_dataset(args.data)
    params = encoder.load_checkpoint(args.checkpoint)
    partition = clustering.load_partition(args.partition)
    view = pipeline.make_train_view(dataset)
    adapted = pipeline.adapt_finetune(params, partition, view, cfg)
    encoder.save_checkpoint(adapted, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_coteach(args) -> int:
    cfg = resolve_config(args)
    dataset = synthdata.load_dataset(args.data)
    params = encoder.load_checkpoint(args.checkpoint)
    partition = clustering.load_partition(args.partition)
    view = pipeline.make_train_view(dataset)
    probe = pipeline.make_probe(dataset, "val")
    out = _out_dir(args.out_dir)

    best, log = pipeline.run_coteach(params, partition, view, probe, cfg, cfg.mean_teaching)
    encoder.save_checkpoint(best.params, out / "best.json")
    if best.ema_params is not None:
        encoder.save_checkpoint(best.ema_params, out / "best_ema.json")
    report.write_round_log(out / "rounds.csv", log)
    report.save_rounds_figure(log, out / "rounds.png")
    print(
        f"best validation mAP {best.score:.4f} at paradigm {best.paradigm} round {best.round}; "
        f"outputs in {out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    dataset = synthdata.load_dataset(args.data)
    params = encoder.load_checkpoint(args.checkpoint)
    result = pipeline.evaluate_checkpoint(params, dataset, args.split)
    print(
        f"mAP {result.map:.4f}  rank1 {result.rank(1):.4f}  rank5 {result.rank(5):.4f}  "
        f"rank10 {result.rank(10):.4f}  excluded {result.excluded}"
    )
    if args.out:
        row = pipeline.metric_row(args.variant, result, cfg, cfg.hash())
        report.write_rows(args.out, report.METRIC_COLUMNS, [row])
        print(f"wrote {args.out}")
    return 0


def cmd_experiment(args) -> int:
    cfg = resolve_config(args)
    seeds = _parse_int_list(args.seeds, "--seeds") if args.seeds else [cfg.seed]
    out = _out_dir(args.out_dir)
    rounds_dir = _out_dir(out / "rounds")

    results = []
    with report.CsvSink(out / "metrics.csv", report.METRIC_COLUMNS) as sink:
        for seed in seeds:
            result = pipeline.run_experiment(cfg.replace(seed=seed), on_metric=sink.write)
            results.append(result)
            report.write_result_json(out / f"results_seed{seed}.json", result)
            for variant, log in result.round_logs.items():
                stem = f"rounds_{variant.replace('-', '_')}_seed{seed}"
                report.write_round_log(rounds_dir / f"{stem}.csv", log)
                report.save_rounds_figure(log, rounds_dir / f"{stem}.png")

    medians = pipeline.median_by_variant(results)
    report.save_ablation_figure(medians, out / "ablation.png")
    for variant in pipeline.VARIANTS:
        print(f"{variant}: median mAP {medians[variant]:.4f} over {len(seeds)} seed(s)")
    print(f"outputs in {out}")
    return 0


def cmd_sweep_n(args) -> int:
    cfg = resolve_config(args)
    n_values = _parse_int_list(args.n_values, "--n-values")
    seeds = _parse_int_list(args.seeds, "--seeds") if args.seeds else [cfg.seed]
    out = _out_dir(args.out_dir)

    with report.CsvSink(out / "sweep.csv", report.SWEEP_COLUMNS) as sink:
        rows = pipeline.sweep_granularity(cfg, n_values, seeds, on_row=sink.write)
    report.save_sweep_figure(rows, out / "sweep.png")
    for n in n_values:
        per_n = [r["map"] for r in rows if r["n"] == n]
        print(f"n={n}: median mAP {float(sorted(per_n)[len(per_n) // 2]):.4f}")
    print(f"outputs in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cotier", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate the benchmark dataset pair")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-source", help="train the encoder on labeled source data")
    p.add_argument("--data", required=True, help="source dataset JSON")
    p.add_argument("--out", required=True, help="checkpoint JSON to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("partition", help="split target training data into confidence tiers")
    p.add_argument("--data", required=True, help="target dataset JSON")
    p.add_argument("--checkpoint", required=True, help="encoder checkpoint JSON")
    p.add_argument("--out", required=True, help="partition JSON to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("adapt", help="fine-tune the encoder on pseudo-labeled tiers")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("coteach", help="run teacher-student co-teaching over the tiers")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="adapted encoder checkpoint")
    p.add_argument("--partition", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_coteach)

    p = sub.add_parser("evaluate", help="score a checkpoint on a retrieval split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "val"), default="test")
    p.add_argument("--variant", default="checkpoint", help="variant name stamped on the CSV row")
    p.add_argument("--out", help="optional metrics CSV to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the full four-variant ablation")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", help=f"comma-separated seeds (e.g. {DEFAULT_SEEDS}); defaults to the config seed")
    _add_config_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep-n", help="sweep the tier count and plot mAP plus F-score")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-values", default=DEFAULT_SWEEP)
    p.add_argument("--seeds", help="comma-separated seeds; defaults to the config seed")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep_n)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (CotierError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
