"""
Top-down realistic taxonomic prediction with per-node rejection, the
bottom-up (RHC) and flat-rejection baselines, and competence-level selection.
"""
import csv
import logging
import math
from typing import List, Optional, Sequence, Type

import numpy as np

from .data import Dataset
from .decision import CompetenceLevel, Decision, Hop, confidence
from .evaluation import CpbConvention, cpb
from .model import FeatureMap, NodeParams
from .predictors import BasePredictor, BottomUpPredictor, FlatRejectPredictor, TopDownPredictor
from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

__all__ = [
    "CompetenceLevel", "Decision", "Hop", "confidence", "rtc_predict", "rhc_predict", "flat_reject_predict",
    "threshold_for_rate", "calibrate_gamma", "gamma_for_root_rate", "default_gamma_grid", "write_predictions",
]


def default_gamma_grid() -> List[float]:
    """0.00, 0.05, ..., 1.00"""
    return [round(0.05 * i, 2) for i in range(21)]


def rtc_predict(x: np.ndarray, t: Taxonomy, params: NodeParams, fmap: FeatureMap, gamma: float) -> Decision:
    return TopDownPredictor(t, params, fmap).predict(x, gamma)


def rhc_predict(x: np.ndarray, t: Taxonomy, params: NodeParams, fmap: FeatureMap, gamma: float) -> Decision:
    """params are flat: one column per leaf of t, in leaf order"""
    return BottomUpPredictor(t, params, fmap).predict(x, gamma)


def flat_reject_predict(x: np.ndarray, t: Taxonomy, params: NodeParams, fmap: FeatureMap,
                        threshold: float) -> Decision:
    return FlatRejectPredictor(t, params, fmap).predict(x, threshold)


def threshold_for_rate(scores: Sequence[float], rate: float) -> float:
    """
    Threshold rejecting floor(rate * M) of the scores, rejecting only scores
    strictly below it. A score equal to the threshold is accepted, so ties at the
    boundary can make the realized rejection count smaller. rate = 1 returns the
    next float above the maximum so that every sample is rejected.
    """
    scores = np.sort(np.asarray(scores, dtype=np.float64))
    if scores.size == 0:
        raise ValueError("threshold_for_rate needs at least one score")
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    n_reject = int(math.floor(rate * scores.size))
    if n_reject >= scores.size:
        return float(np.nextafter(scores[-1], np.inf))
    return float(scores[n_reject])


def gamma_for_root_rate(X: np.ndarray, t: Taxonomy, params: NodeParams, fmap: FeatureMap, rate: float) -> float:
    """Competence level at which the given fraction of X exits at the root; rate 1 may exceed 1.0"""
    scores = TopDownPredictor(t, params, fmap).root_confidences(X)
    return threshold_for_rate(scores, rate)


def calibrate_gamma(val: Dataset, t: Taxonomy, params: NodeParams, fmap: FeatureMap,
                    grid: Optional[Sequence[float]] = None,
                    predictor_cls: Type[BasePredictor] = TopDownPredictor,
                    convention: CpbConvention = CpbConvention.LITERAL) -> CompetenceLevel:
    """gamma maximizing validation CPB; ties go to the smaller gamma"""
    if len(val) == 0:
        raise ValueError("Validation set is empty")
    grid = sorted(default_gamma_grid() if grid is None else grid)
    predictor = predictor_cls(t, params, fmap)
    best_gamma, best_cpb = None, -np.inf
    for gamma in grid:
        score = cpb(predictor.predict_many(val.features, gamma), val.labels, t, convention)
        logger.debug(f"gamma={gamma:.3f}: validation CPB {score:.4f}")
        if score > best_cpb:
            best_gamma, best_cpb = gamma, score
    logger.info(f"Calibrated gamma={best_gamma} ({predictor_cls.__name__}, validation CPB {best_cpb:.4f})")
    return CompetenceLevel(float(best_gamma))


def write_predictions(path: str, dataset: Dataset, decisions: Sequence[Decision], t: Taxonomy) -> None:
    """One row per sample: id, exit node, exit depth, at_leaf, confidence at exit, ground truth"""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["# id", "exit_node", "exit_depth", "at_leaf", "confidence", "truth"])
        for sample_id, decision, truth in zip(dataset.ids, decisions, dataset.labels):
            writer.writerow([
                sample_id,
                t.name(decision.exit_node),
                t.depth(decision.exit_node),
                int(decision.at_leaf),
                f"{decision.exit_confidence:.6f}",
                t.name(int(truth)),
            ])
