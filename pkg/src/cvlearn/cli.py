from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys
from typing import List, Optional, Sequence

from cvlearn import __version__
from cvlearn.config_loader import EXPERIMENTS, ExperimentConfig, default_config, load_experiment_config
from cvlearn.domain.losses import hamming_loss
from cvlearn.domain.requirements import FLAT, check_feasibility, load_rules
from cvlearn.errors import CvlearnError, ParseError
from cvlearn.harness.experiments import run_experiment
from cvlearn.structured.decoding import constrained_viterbi, viterbi
from cvlearn.structured.factor_graph import load_chain_model, load_dataset
from cvlearn.utils.results_writer import dumps, emit_results

logger = logging.getLogger("cvlearn")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Path to experiment YAML/JSON file.")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed.")
    common.add_argument("--out", type=str, default=None, help="Output directory (overrides output_dir).")
    common.add_argument("--trials", type=int, default=None, help="Monte Carlo trials (overrides config).")
    common.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level.",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="cvlearn",
        description="Concurrent verifier toolkit and learnability experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "itv": "Inference-time verification sandwich bound (exact, finite distributions).",
        "counterexample": "Non-realizable counterexample: ITV gap vs LTV gap.",
        "bound-multiclass": "Multiclass margin bound for the verified class.",
        "bound-structured": "Structured (factor graph) margin bounds, additive and multiplicative.",
        "complexity": "Rademacher / Gaussian complexity estimates and inequality checks.",
    }
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=helps[name])

    dec = sub.add_parser("decode", parents=[common], help="Constrained decoding of a JSON-lines dataset.")
    dec.add_argument("--model", type=str, required=True, help="Chain model JSON file.")
    dec.add_argument("--dataset", type=str, required=True, help="JSON-lines dataset ({x, y?, l?} per line).")
    dec.add_argument("--rules", type=str, default=None, help="Structured rule file (omit for plain Viterbi).")

    chk = sub.add_parser("check-rules", parents=[common], help="Feasibility report of a rule file.")
    chk.add_argument("--rules", type=str, required=True, help="Rule file (JSON).")
    chk.add_argument("--dataset", type=str, default=None, help="JSON-lines inputs to check.")
    return parser


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, stream=sys.stderr)


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_experiment_config(args.config)
        if cfg.experiment != args.command:
            raise ValueError(f"{args.config} configures {cfg.experiment!r}, not {args.command!r}")
    else:
        cfg = default_config(args.command, output_dir=Path("results") / args.command)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out, trials=args.trials)


# -----------------------------
# Commands
# -----------------------------

def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    report = run_experiment(cfg)
    paths = emit_results(report, cfg)
    for p in paths:
        logger.debug("wrote %s", p)
    if not report.ok:
        logger.error("%s: asserted properties failed", cfg.experiment)
        return EXIT_FAILED
    logger.info("%s: all asserted properties hold", cfg.experiment)
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    model = load_chain_model(args.model)
    examples = load_dataset(args.dataset)
    req = load_rules(args.rules) if args.rules else None

    lines: List[str] = []
    total = 0.0
    n_labelled = 0
    for i, ex in enumerate(examples):
        y_hat = constrained_viterbi(model, ex.x, req) if req is not None else viterbi(model, ex.x)
        row = {"index": i, "y": list(y_hat)}
        if ex.y:
            row["hamming"] = hamming_loss(y_hat, ex.y)
            total += row["hamming"]
            n_labelled += 1
        lines.append(json.dumps(row))

    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "decoded.jsonl").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if n_labelled:
        logger.info("decode: mean Hamming loss %.4f over %d labelled examples", total / n_labelled, n_labelled)
    return EXIT_OK


def cmd_check_rules(args: argparse.Namespace) -> int:
    req = load_rules(args.rules)
    if args.dataset is None:
        logger.info("check-rules: %s parsed (%s, %d rules)", args.rules, req.kind, len(req.rules))
        return EXIT_OK

    examples = load_dataset(args.dataset)
    inputs = [ex.x for ex in examples]
    if req.kind == FLAT:
        report = check_feasibility(req, inputs)
    else:
        lengths = None
        if not isinstance(req.label_count, tuple):
            for lineno, ex in enumerate(examples, start=1):
                if ex.l < 1:
                    raise ParseError("structured rules need 'y' or 'l' on every line", line=lineno, field="l")
            lengths = [ex.l for ex in examples]
        report = check_feasibility(req, inputs, lengths=lengths)

    text = dumps(report.to_dict())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "feasibility.json").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if not report.ok:
        logger.error("check-rules: %d of %d inputs have no feasible output", len(report.violations), report.n_inputs)
        return EXIT_FAILED
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)

    try:
        if args.command == "decode":
            return cmd_decode(args)
        if args.command == "check-rules":
            return cmd_check_rules(args)
        return cmd_experiment(args)
    except CvlearnError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR
    except (KeyError, TypeError, ValueError, OSError) as e:
        # 設定ファイルや入出力の誤り
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
