import argparse
import logging
import os
import sys

from src.errors import LsapError
from src.models import ExperimentConfig, METRIC_KINDS
from src.registry import RUN_DIR_ENV, RunDirectory, dump_config, load_config
from src.runner import Pipeline, StageResult, SweepSummary


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="Experiment YAML (default: built-in defaults)")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="Override one config value; repeatable",
    )
    parser.add_argument(
        "--run-dir", default=os.environ.get(RUN_DIR_ENV),
        help=f"Run directory (default: ${RUN_DIR_ENV}, else run.run_dir from the config)",
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m src",
        description="Membership inference on diffusion denoisers via adversarial cost",
        epilog="default configuration:\n\n" + dump_config(ExperimentConfig()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("gen-data", "Synthesize the corpus and write the split manifest"),
        ("train", "Train the toy denoiser on member clips"),
        ("baseline", "Score loss/endpoint/trajectory baselines at matched compute"),
        ("sweep", "Run the timestep, budget and metric ablation grids"),
        ("report", "Render the run report (JSON + text)"),
    ]:
        _common(sub.add_parser(name, help=help_text))

    calibrate = sub.add_parser("calibrate", help="Calibrate τ on the dev-nonmember split")
    _common(calibrate)
    calibrate.add_argument("--t-ratio", type=float, default=None, help="Override attack.t_ratio")
    calibrate.add_argument("--metric", default=None, choices=METRIC_KINDS, help="Override attack.metric")

    attack = sub.add_parser("attack", help="Score members and eval-nonmembers with the probe")
    _common(attack)
    attack.add_argument("--t-ratio", type=float, default=None, help="Override attack.t_ratio")
    attack.add_argument("--eta-max", type=float, default=None, help="Override attack.eta_max")
    attack.add_argument("--metric", default=None, choices=METRIC_KINDS, help="Override attack.metric")

    evaluate = sub.add_parser("evaluate", help="AUC, TPR@FPR and confidence intervals per score file")
    _common(evaluate)
    evaluate.add_argument(
        "--attacks", default=None,
        help="Comma-separated score-file names to evaluate (default: all)",
    )
    return parser


def parse_args(argv=None):
    return build_parser().parse_args(argv)


def print_stage(result: StageResult):
    print("\n" + "=" * 40)
    print(f"=== {result.stage} ===")
    for key, value in result.summary.items():
        if key == "text":
            continue
        print(f"  {key}: {value}")
    if result.artifacts:
        print("Wrote:")
        for path in result.artifacts:
            print(f"  {path}")


def print_sweep(summary: SweepSummary):
    print("\n" + "=" * 40)
    print(f"=== Sweep ({summary.family_size} cells, α={summary.alpha:g}) ===")
    print(f"{'axis':<10} {'value':<14} {'AUC':>7} {'TPR@' + format(summary.fpr_target, 'g'):>10} "
          f"{'p':>10}  holm  bonf")
    for c in summary.cells:
        print(f"{c.axis:<10} {str(c.value):<14} {c.auc:>7.3f} {c.tpr:>10.3f} {c.p_value:>10.2e}  "
              f"{'✓' if c.holm_reject else '·':^4}  {'✓' if c.bonferroni_reject else '·':^4}")


def run(args) -> int:
    config = load_config(args.config, args.overrides)
    run_dir = RunDirectory(args.run_dir or config.run.run_dir)
    pipeline = Pipeline(config, run_dir)

    if args.command == "sweep":
        print_sweep(pipeline.sweep())
        return 0
    if args.command == "calibrate":
        result = pipeline.calibrate(args.t_ratio, args.metric)
    elif args.command == "attack":
        result = pipeline.attack(args.t_ratio, args.eta_max, args.metric)
    elif args.command == "evaluate":
        names = args.attacks.split(",") if args.attacks else None
        result = pipeline.evaluate(names)
    elif args.command == "gen-data":
        result = pipeline.gen_data()
    elif args.command == "train":
        result = pipeline.train()
    elif args.command == "baseline":
        result = pipeline.baseline()
    else:
        result = pipeline.report()
        print(result.summary["text"])
    print_stage(result)
    return 0


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except LsapError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
