"""
Command-line pipeline: synth, train, calibrate, predict, eval, compare, ablate.

Every command writes into --out-dir:
  synth      taxonomy.tsv, taxonomy_tree.txt, train.csv, val.csv, test.csv, splits.csv
  train      checkpoint.npz, train_log.csv
  calibrate  gamma.txt
  predict    predictions.csv
  eval       predictions.csv, metrics.txt, metrics.json
  compare    report_<baseline>.{txt,json}, predictions_<baseline>.csv, rejection_table.csv
  ablate     report_<preset>.{txt,json}, ablation.csv
plus config_used.yaml (the effective configuration) and run.log.

Exit status: 0 success, 2 usage error, 3 invalid input, 4 training divergence.
"""
import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import build_config, config_to_dict, dump_config, load_config_file
from .data import Dataset, SyntheticConfig, label_counts, load_dataset, synth_generate, write_benchmark
from .decision import Decision
from .evaluation import BUCKETS, ALL, CpbConvention, MetricsReport, PopularitySplit, popularity_split, report
from .exceptions import ConfigError, DeepRTCError, DivergenceError
from .inference import (
    calibrate_gamma,
    default_gamma_grid,
    gamma_for_root_rate,
    threshold_for_rate,
    write_predictions,
)
from .model import Checkpoint, Structure, load_checkpoint, node_name_order, save_checkpoint
from .outputs import OutputFiles
from .predictors import BasePredictor, BottomUpPredictor, FlatRejectPredictor, TopDownPredictor
from .taxonomy import Taxonomy, load_taxonomy
from .training import TrainConfig, TrainResult, apply_preset, train, train_flat, write_training_log
from .utils.logging_config import configure_logging, log_duration

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID_INPUT = 3
EXIT_DIVERGENCE = 4

BASELINES = ("deep-rtc", "flat", "rhc", "rp")
ABLATION_ROWS = (("flat", "-"), ("rhc", "BU"), ("pi+sts", "TD"), ("pi+ncl", "TD"), ("deep-rtc", "TD"))


class UsageError(Exception):
    """Bad command-line usage, exit status 2"""


@dataclass(frozen=True)
class EvalConfig:
    gamma_grid: Optional[Tuple[float, ...]] = None
    split_rule: str = "thirds"
    shot_thresholds: Tuple[int, ...] = (20, 100)
    cpb_convention: str = "literal"
    rejection_rates: Tuple[float, ...] = (0.05, 0.10, 0.20)

    def __post_init__(self):
        if self.gamma_grid is not None and (not self.gamma_grid or any(not 0 <= g <= 1 for g in self.gamma_grid)):
            raise ConfigError("gamma_grid values must lie in [0, 1]")
        if len(self.shot_thresholds) != 2:
            raise ConfigError("shot_thresholds takes exactly two counts (low, high)")
        if any(not 0 <= r <= 1 for r in self.rejection_rates):
            raise ConfigError("rejection rates must lie in [0, 1]")
        if self.cpb_convention not in {c.value for c in CpbConvention}:
            raise ConfigError(f"Unknown CPB convention {self.cpb_convention!r}")
        if self.split_rule not in ("thirds", "thresholds"):
            raise ConfigError(f"Unknown split rule {self.split_rule!r}")

    @property
    def grid(self) -> List[float]:
        return list(self.gamma_grid) if self.gamma_grid else default_gamma_grid()


@dataclass
class RunConfig:
    command: str
    paths: Dict[str, Optional[str]]
    train_cfg: TrainConfig
    eval_cfg: EvalConfig
    gamma: Optional[float]
    baseline: str


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deep-rtc",
        description="Realistic taxonomic classification over precomputed features",
        epilog=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=("synth", "train", "calibrate", "predict", "eval", "compare", "ablate"))
    parser.add_argument("--taxonomy", help="hierarchy file, one 'child<TAB>parent' edge per line")
    parser.add_argument("--train", help="training features file")
    parser.add_argument("--val", help="validation features file")
    parser.add_argument("--test", help="test features file")
    parser.add_argument("--config", help="key=value or YAML config file")
    parser.add_argument("--checkpoint", help="model checkpoint (.npz)")
    parser.add_argument("--gamma", type=float, help="competence level, or the RP threshold for --baseline rp")
    parser.add_argument("--gamma-grid", help="comma-separated gamma values for calibration")
    parser.add_argument("--baseline", choices=BASELINES, default="deep-rtc")
    parser.add_argument("--out-dir", required=True, help="directory for every output file")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--rejection-rates", help="comma-separated rates for compare, default 0.05,0.1,0.2")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; may be repeated")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {"seed": args.seed, "gamma_grid": args.gamma_grid,
                                 "rejection_rates": args.rejection_rates}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    return overrides


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(args, n)]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


# -- helpers -------------------------------------------------------------------

def _predictor_for(baseline: str, t: Taxonomy, ckpt: Checkpoint) -> BasePredictor:
    if baseline == "deep-rtc":
        if ckpt.structure is not Structure.HIERARCHICAL:
            raise ConfigError("deep-rtc needs a hierarchical checkpoint")
        ckpt.check_against(t)
        return TopDownPredictor(t, ckpt.params, ckpt.fmap)
    if ckpt.structure is not Structure.FLAT:
        raise ConfigError(f"{baseline} needs a flat checkpoint (train with --baseline {baseline})")
    if ckpt.node_names != tuple(t.name(leaf) for leaf in t.leaf_ids):
        raise ConfigError("Flat checkpoint leaves do not match the taxonomy")
    cls = {"flat": FlatRejectPredictor, "rp": FlatRejectPredictor, "rhc": BottomUpPredictor}[baseline]
    return cls(t, ckpt.params, ckpt.fmap)


def _resolve_gamma(run: RunConfig, predictor: BasePredictor, val: Optional[Dataset]) -> float:
    if run.baseline == "flat":
        return 0.0
    if run.gamma is not None:
        return run.gamma
    if val is None:
        raise UsageError("Either --gamma or --val (for calibration on --gamma-grid) is required")
    if run.baseline == "rp":
        raise UsageError("--baseline rp takes an explicit --gamma threshold")
    return calibrate_gamma(val, predictor.t, predictor.params, predictor.fmap, run.eval_cfg.grid,
                           predictor_cls=type(predictor), convention=run.eval_cfg.cpb_convention).gamma


def _split_for(train_set: Optional[Dataset], t: Taxonomy, eval_cfg: EvalConfig) -> Optional[PopularitySplit]:
    if train_set is None:
        return None
    return popularity_split(label_counts(train_set, t), eval_cfg.split_rule, tuple(eval_cfg.shot_thresholds), t=t)


def _write_report(out_dir: str, name: str, metrics: MetricsReport) -> None:
    metrics.write(os.path.join(out_dir, OutputFiles.REPORT_TEXT.format(baseline=name)),
                  os.path.join(out_dir, OutputFiles.REPORT_JSON.format(baseline=name)))


def _train_model(baseline: str, train_set: Dataset, t: Taxonomy, cfg: TrainConfig) -> TrainResult:
    if baseline == "deep-rtc":
        return train(train_set, t, cfg)
    return train_flat(train_set, t, cfg)


# -- commands ------------------------------------------------------------------

@log_duration("synth")
def cmd_synth(run: RunConfig, values: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    cfg = build_config(SyntheticConfig, values, overrides)
    write_benchmark(synth_generate(cfg), run.paths["out_dir"])
    return {"synthetic": config_to_dict(cfg)}


@log_duration("train")
def cmd_train(run: RunConfig, **_) -> Dict[str, Any]:
    t = load_taxonomy(run.paths["taxonomy"])
    train_set = load_dataset(run.paths["train"], t, default_tag="train")
    result = _train_model(run.baseline, train_set, t, run.train_cfg)
    structure = Structure.HIERARCHICAL if run.baseline == "deep-rtc" else Structure.FLAT
    save_checkpoint(os.path.join(run.paths["out_dir"], OutputFiles.CHECKPOINT), result.params, result.fmap,
                    node_name_order(result.taxonomy), structure)
    write_training_log(result.history, os.path.join(run.paths["out_dir"], OutputFiles.TRAIN_LOG))
    return {}


@log_duration("calibrate")
def cmd_calibrate(run: RunConfig, **_) -> Dict[str, Any]:
    t = load_taxonomy(run.paths["taxonomy"])
    val = load_dataset(run.paths["val"], t, default_tag="val")
    predictor = _predictor_for(run.baseline, t, load_checkpoint(run.paths["checkpoint"]))
    gamma = _resolve_gamma(RunConfig(**{**run.__dict__, "gamma": None}), predictor, val)
    with open(os.path.join(run.paths["out_dir"], OutputFiles.GAMMA), "w", encoding="utf-8") as handle:
        handle.write(f"gamma={gamma}\n")
    return {"gamma": gamma}


def _predict(run: RunConfig) -> Tuple[Taxonomy, Dataset, List[Decision], List[Decision], float]:
    t = load_taxonomy(run.paths["taxonomy"])
    test = load_dataset(run.paths["test"], t, default_tag="test")
    val = load_dataset(run.paths["val"], t, default_tag="val") if run.paths.get("val") else None
    predictor = _predictor_for(run.baseline, t, load_checkpoint(run.paths["checkpoint"]))
    gamma = _resolve_gamma(run, predictor, val)
    decisions = predictor.predict_many(test.features, gamma)
    leaf_decisions = predictor.predict_many(test.features, 0.0)
    write_predictions(os.path.join(run.paths["out_dir"], OutputFiles.PREDICTIONS), test, decisions, t)
    return t, test, decisions, leaf_decisions, gamma


@log_duration("predict")
def cmd_predict(run: RunConfig, **_) -> Dict[str, Any]:
    gamma = _predict(run)[-1]
    return {"gamma": gamma}


@log_duration("eval")
def cmd_eval(run: RunConfig, **_) -> Dict[str, Any]:
    t, test, decisions, leaf_decisions, gamma = _predict(run)
    train_set = load_dataset(run.paths["train"], t, default_tag="train") if run.paths.get("train") else None
    metrics = report(decisions, test.labels, _split_for(train_set, t, run.eval_cfg), t,
                     leaf_decisions=leaf_decisions, convention=run.eval_cfg.cpb_convention)
    metrics.write(os.path.join(run.paths["out_dir"], OutputFiles.METRICS_TEXT),
                  os.path.join(run.paths["out_dir"], OutputFiles.METRICS_JSON))
    logger.info(f"{run.baseline} at gamma={gamma}: CPB {metrics.cpb:.4f}, hier acc {metrics.hier_acc:.4f}")
    return {"gamma": gamma}


class Comparison:
    """Deep-RTC against the flat, RHC and RP baselines on one train/val/test split"""

    def __init__(self, t: Taxonomy, train_set: Dataset, val: Dataset, test: Dataset, run: RunConfig):
        self.t = t
        self.train_set = train_set
        self.val = val
        self.test = test
        self.run = run
        self.split = _split_for(train_set, t, run.eval_cfg)
        self.logger = logging.getLogger(self.__class__.__name__)

    def _report(self, decisions: Sequence[Decision], leaf_decisions: Sequence[Decision]) -> MetricsReport:
        return report(decisions, self.test.labels, self.split, self.t, leaf_decisions=leaf_decisions,
                      convention=self.run.eval_cfg.cpb_convention)

    def fit(self, deep: Optional[TrainResult] = None) -> None:
        cfg = self.run.train_cfg
        self.deep = deep or train(self.train_set, self.t, cfg)
        self.flat = train_flat(self.train_set, self.t, cfg)
        self.top_down = TopDownPredictor(self.t, self.deep.params, self.deep.fmap)
        self.flat_reject = FlatRejectPredictor(self.t, self.flat.params, self.flat.fmap)
        self.bottom_up = BottomUpPredictor(self.t, self.flat.params, self.flat.fmap)

    def baseline_reports(self) -> Dict[str, Tuple[MetricsReport, List[Decision]]]:
        t, grid = self.t, self.run.eval_cfg.grid
        convention = self.run.eval_cfg.cpb_convention
        X = self.test.features

        gamma = calibrate_gamma(self.val, t, self.deep.params, self.deep.fmap, grid, convention=convention).gamma
        deep_leaf = self.top_down.predict_many(X, 0.0)
        deep_decisions = self.top_down.predict_many(X, gamma)

        flat_leaf = self.flat_reject.predict_many(X, 0.0)
        rhc_gamma = calibrate_gamma(self.val, t, self.flat.params, self.flat.fmap, grid,
                                    predictor_cls=BottomUpPredictor, convention=convention).gamma
        rhc_decisions = self.bottom_up.predict_many(X, rhc_gamma)

        # RP rejects as often as Deep-RTC does at the root on validation
        val_rate = float(np.mean([d.exit_node == t.root for d in self.top_down.predict_many(self.val.features, gamma)]))
        rp_threshold = threshold_for_rate(self.flat_reject.leaf_posteriors(self.val.features).max(axis=1), val_rate)
        rp_decisions = self.flat_reject.predict_many(X, rp_threshold)

        self.logger.info(f"deep-rtc gamma={gamma}, rhc gamma={rhc_gamma}, rp threshold={rp_threshold:.4f}")
        return {
            "deep-rtc": (self._report(deep_decisions, deep_leaf), deep_decisions),
            "flat": (self._report(flat_leaf, flat_leaf), flat_leaf),
            "rhc": (self._report(rhc_decisions, flat_leaf), rhc_decisions),
            "rp": (self._report(rp_decisions, flat_leaf), rp_decisions),
        }

    def rejection_table(self, rates: Sequence[float]) -> List[Dict[str, Any]]:
        """CPB per popularity bucket for Deep-RTC and RP at matched root-rejection rates"""
        t, X = self.t, self.test.features
        flat_scores = self.flat_reject.leaf_posteriors(self.val.features).max(axis=1)
        flat_leaf = self.flat_reject.predict_many(X, 0.0)
        deep_leaf = self.top_down.predict_many(X, 0.0)
        rows = []
        for rate in rates:
            gamma = gamma_for_root_rate(self.val.features, t, self.deep.params, self.deep.fmap, rate)
            threshold = threshold_for_rate(flat_scores, rate)
            for method, decisions, leaf in (
                ("deep-rtc", self.top_down.predict_many(X, gamma), deep_leaf),
                ("rp", self.flat_reject.predict_many(X, threshold), flat_leaf),
            ):
                metrics = self._report(decisions, leaf)
                for bucket in (ALL,) + BUCKETS:
                    split_metrics = metrics.per_split.get(bucket)
                    rows.append({
                        "rate": rate,
                        "method": method,
                        "split": bucket,
                        "cpb": None if split_metrics is None else split_metrics.cpb,
                        "realized_rate": metrics.rejection_rate,
                    })
        return rows


def _load_three(run: RunConfig) -> Tuple[Taxonomy, Dataset, Dataset, Dataset]:
    t = load_taxonomy(run.paths["taxonomy"])
    return (t,
            load_dataset(run.paths["train"], t, default_tag="train"),
            load_dataset(run.paths["val"], t, default_tag="val"),
            load_dataset(run.paths["test"], t, default_tag="test"))


def _write_rows(path: str, rows: List[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "NA" if v is None else v for k, v in row.items()})


@log_duration("compare")
def cmd_compare(run: RunConfig, **_) -> Dict[str, Any]:
    t, train_set, val, test = _load_three(run)
    comparison = Comparison(t, train_set, val, test, run)
    deep = None
    if run.paths.get("checkpoint"):
        ckpt = load_checkpoint(run.paths["checkpoint"])
        if ckpt.structure is not Structure.HIERARCHICAL:
            raise ConfigError("compare takes a hierarchical checkpoint for deep-rtc")
        ckpt.check_against(t)
        deep = TrainResult(ckpt.params, ckpt.fmap, t)
    comparison.fit(deep)

    out_dir = run.paths["out_dir"]
    for name, (metrics, decisions) in comparison.baseline_reports().items():
        _write_report(out_dir, name, metrics)
        write_predictions(os.path.join(out_dir, OutputFiles.REPORT_PREDICTIONS.format(baseline=name)), test, decisions, t)
    _write_rows(os.path.join(out_dir, OutputFiles.REJECTION_TABLE), comparison.rejection_table(run.eval_cfg.rejection_rates))
    return {}


@log_duration("ablate")
def cmd_ablate(run: RunConfig, **_) -> Dict[str, Any]:
    t, train_set, val, test = _load_three(run)
    split = _split_for(train_set, t, run.eval_cfg)
    grid, convention = run.eval_cfg.grid, run.eval_cfg.cpb_convention
    flat = train_flat(train_set, t, run.train_cfg)
    rows = []
    for name, inference in ABLATION_ROWS:
        if name in ("flat", "rhc"):
            params, fmap = flat.params, flat.fmap
            predictor_cls = FlatRejectPredictor if name == "flat" else BottomUpPredictor
        else:
            result = train(train_set, t, apply_preset(run.train_cfg, name))
            params, fmap, predictor_cls = result.params, result.fmap, TopDownPredictor
        predictor = predictor_cls(t, params, fmap)
        gamma = 0.0 if name == "flat" else calibrate_gamma(val, t, params, fmap, grid, predictor_cls, convention).gamma
        leaf_decisions = predictor.predict_many(test.features, 0.0)
        metrics = report(predictor.predict_many(test.features, gamma), test.labels, split, t,
                         leaf_decisions=leaf_decisions, convention=convention)
        _write_report(run.paths["out_dir"], name, metrics)
        rows.append({"method": name, "leaf_acc": metrics.leaf_acc, "depth": metrics.depth,
                     "hier_acc": metrics.hier_acc, "cpb": metrics.cpb, "inference": inference, "gamma": gamma})
    _write_rows(os.path.join(run.paths["out_dir"], OutputFiles.ABLATION_TABLE), rows)
    return {}


COMMANDS = {
    "synth": ((), cmd_synth),
    "train": (("taxonomy", "train"), cmd_train),
    "calibrate": (("taxonomy", "val", "checkpoint"), cmd_calibrate),
    "predict": (("taxonomy", "test", "checkpoint"), cmd_predict),
    "eval": (("taxonomy", "test", "checkpoint"), cmd_eval),
    "compare": (("taxonomy", "train", "val", "test"), cmd_compare),
    "ablate": (("taxonomy", "train", "val", "test"), cmd_ablate),
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_OK if exit_.code in (0, None) else EXIT_USAGE

    os.makedirs(args.out_dir, exist_ok=True)
    configure_logging(os.path.join(args.out_dir, OutputFiles.RUN_LOG),
                      level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        required, handler = COMMANDS[args.command]
        _require(args, *required)
        if args.gamma is not None and args.gamma_grid:
            raise UsageError("--gamma and --gamma-grid are mutually exclusive")
        if args.gamma is not None and not 0.0 <= args.gamma <= 1.0:
            raise UsageError(f"--gamma must lie in [0, 1], got {args.gamma}")
        values = load_config_file(args.config)
        overrides = _overrides(args)
        run_cfg = RunConfig(
            command=args.command,
            paths={k: getattr(args, k) for k in ("taxonomy", "train", "val", "test", "config", "checkpoint", "out_dir")},
            train_cfg=build_config(TrainConfig, values, overrides),
            eval_cfg=build_config(EvalConfig, values, overrides),
            gamma=args.gamma,
            baseline=args.baseline,
        )
        extra = handler(run_cfg, values=values, overrides=overrides)
        echo = {"command": args.command, "baseline": args.baseline, "paths": run_cfg.paths,
                "train": config_to_dict(run_cfg.train_cfg), "eval": config_to_dict(run_cfg.eval_cfg)}
        echo.update(extra or {})
        dump_config(echo, os.path.join(args.out_dir, OutputFiles.CONFIG_ECHO))
    except UsageError as error:
        logger.error(f"Usage error: {error}")
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except DivergenceError as error:
        logger.error(f"Training diverged: {error}")
        return EXIT_DIVERGENCE
    except (DeepRTCError, OSError) as error:
        logger.error(f"Invalid input: {error}")
        return EXIT_INVALID_INPUT
    logger.info(f"{args.command} finished, outputs in {args.out_dir}")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
