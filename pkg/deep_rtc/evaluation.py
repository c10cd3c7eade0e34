"""
Metrics for taxonomic decisions: correctly predicted bits (CPB), leaf and
hierarchical accuracy, normalized depth and leaf frequency, with breakdowns by
class popularity.

A decision is correct when its exit node lies on the ground-truth leaf's root
path (the leaf itself included). A root exit counts as correct and carries
zero information.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .decision import Decision
from .exceptions import DatasetError, DimensionMismatchError
from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

BUCKETS = ("many", "medium", "few")
ALL = "all"
DEFAULT_SHOT_THRESHOLDS = (20, 100)


class SplitRule(str, Enum):
    THIRDS = "thirds"
    THRESHOLDS = "thresholds"


class CpbConvention(str, Enum):
    # 1 - |Leaves(T_y)| / |Leaves(T)|, as printed; a correct leaf scores 1 - 1/|Leaves(T)|
    LITERAL = "literal"
    # 1 - (|Leaves(T_y)| - 1) / (|Leaves(T)| - 1); a correct leaf scores exactly 1
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class PopularitySplit:
    assignment: Dict[int, str]
    rule: SplitRule
    thresholds: Optional[Tuple[float, float]] = None

    def bucket(self, leaf: int) -> str:
        return self.assignment[int(leaf)]

    def sizes(self) -> Dict[str, int]:
        return {b: sum(1 for v in self.assignment.values() if v == b) for b in BUCKETS}


def popularity_split(train_counts: Mapping[int, int], rule: str = SplitRule.THIRDS,
                     thresholds: Optional[Tuple[float, float]] = None,
                     t: Optional[Taxonomy] = None) -> PopularitySplit:
    """
    Bucket leaves by training count.

    thirds: leaves sorted by count (descending, ties by name) give the top
    third to many-shot, the bottom third to few-shot and the rest to medium.
    thresholds: (low, high) cutoffs, many when count > high, few when count < low.
    """
    if not train_counts:
        raise DatasetError("Popularity split needs training counts")
    rule = SplitRule(rule)

    if rule is SplitRule.THRESHOLDS:
        low, high = thresholds or DEFAULT_SHOT_THRESHOLDS
        assignment = {
            int(leaf): "many" if count > high else "few" if count < low else "medium"
            for leaf, count in train_counts.items()
        }
        return PopularitySplit(assignment, rule, (low, high))

    def name_of(leaf: int) -> str:
        return t.name(leaf) if t is not None else f"{leaf:012d}"

    ordered = sorted(train_counts, key=lambda leaf: (-train_counts[leaf], name_of(leaf)))
    third = len(ordered) // 3
    assignment = {}
    for position, leaf in enumerate(ordered):
        if position < third:
            assignment[int(leaf)] = "many"
        elif position >= len(ordered) - third:
            assignment[int(leaf)] = "few"
        else:
            assignment[int(leaf)] = "medium"
    return PopularitySplit(assignment, rule)


# -- per-sample scores -------------------------------------------------------

def _aligned(decisions: Sequence[Decision], truths: Sequence[int]) -> None:
    if len(decisions) != len(truths):
        raise DimensionMismatchError(f"{len(decisions)} decisions vs {len(truths)} ground-truth labels")


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def cpb_score(t: Taxonomy, exit_node: int, truth: int,
              convention: CpbConvention = CpbConvention.LITERAL) -> float:
    if not t.is_on_root_path(exit_node, truth):
        return 0.0
    unresolved = t.leaf_count(exit_node)
    if CpbConvention(convention) is CpbConvention.LITERAL:
        return 1.0 - unresolved / t.n_leaves
    return 1.0 - (unresolved - 1) / (t.n_leaves - 1)


def cpb_literal(decisions: Sequence[Decision], truths: Sequence[int], t: Taxonomy) -> float:
    _aligned(decisions, truths)
    return _mean([cpb_score(t, d.exit_node, int(y), CpbConvention.LITERAL) for d, y in zip(decisions, truths)])


def cpb_normalized(decisions: Sequence[Decision], truths: Sequence[int], t: Taxonomy) -> float:
    _aligned(decisions, truths)
    return _mean([cpb_score(t, d.exit_node, int(y), CpbConvention.NORMALIZED) for d, y in zip(decisions, truths)])


def cpb(decisions: Sequence[Decision], truths: Sequence[int], t: Taxonomy,
        convention: CpbConvention = CpbConvention.LITERAL) -> float:
    if CpbConvention(convention) is CpbConvention.LITERAL:
        return cpb_literal(decisions, truths, t)
    return cpb_normalized(decisions, truths, t)


def hier_acc(decisions: Sequence[Decision], truths: Sequence[int], t: Taxonomy) -> float:
    _aligned(decisions, truths)
    return _mean([float(t.is_on_root_path(d.exit_node, int(y))) for d, y in zip(decisions, truths)])


def leaf_acc(decisions: Sequence[Decision], truths: Sequence[int]) -> float:
    """Accuracy of leaf decisions; pass the gamma = 0 decisions of a hierarchical classifier"""
    _aligned(decisions, truths)
    return _mean([float(d.exit_node == int(y)) for d, y in zip(decisions, truths)])


def leaf_freq(decisions: Sequence[Decision]) -> float:
    return _mean([float(d.at_leaf) for d in decisions])


def avg_depth(decisions: Sequence[Decision], truths: Sequence[int], t: Taxonomy) -> float:
    """Exit depth over the ground-truth leaf's depth, clipped to [0, 1]"""
    _aligned(decisions, truths)
    return _mean([min(1.0, t.depth(d.exit_node) / t.depth(int(y))) for d, y in zip(decisions, truths)])


def rejection_rate(decisions: Sequence[Decision], t: Taxonomy) -> float:
    """Fraction of samples exiting at the root"""
    return _mean([float(d.exit_node == t.root) for d in decisions])


# -- reports -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitMetrics:
    n_samples: int
    cpb: float
    cpb_normalized: float
    leaf_acc: float
    hier_acc: float
    depth: float
    leaf_freq: float
    rejection_rate: float


@dataclass
class MetricsReport:
    cpb: float
    cpb_normalized: float
    leaf_acc: float
    hier_acc: float
    depth: float
    leaf_freq: float
    rejection_rate: float
    n_samples: int
    cpb_convention: str = CpbConvention.LITERAL.value
    per_split: Dict[str, Optional[SplitMetrics]] = field(default_factory=dict)

    def to_flat_dict(self) -> Dict[str, Optional[float]]:
        flat: Dict[str, Optional[float]] = {}
        for bucket in (ALL,) + BUCKETS:
            if bucket not in self.per_split:
                continue
            metrics = self.per_split[bucket]
            for key in SplitMetrics.__dataclass_fields__:
                flat[f"{bucket}.{key}"] = None if metrics is None else getattr(metrics, key)
        return flat

    def to_text(self) -> str:
        lines = [f"cpb_convention={self.cpb_convention}"]
        for key, value in self.to_flat_dict().items():
            lines.append(f"{key}={'NA' if value is None else format(value, '.6g')}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "per_split"}
        payload["per_split"] = {b: (None if m is None else asdict(m)) for b, m in self.per_split.items()}
        return json.dumps(payload, indent=2, sort_keys=False)

    def write(self, text_path: str, json_path: str) -> None:
        with open(text_path, "w", encoding="utf-8") as handle:
            handle.write(self.to_text())
        with open(json_path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json())


def _split_metrics(decisions: Sequence[Decision], leaf_decisions: Sequence[Decision], truths: Sequence[int],
                   t: Taxonomy, convention: CpbConvention) -> SplitMetrics:
    return SplitMetrics(
        n_samples=len(decisions),
        cpb=cpb(decisions, truths, t, convention),
        cpb_normalized=cpb_normalized(decisions, truths, t),
        leaf_acc=leaf_acc(leaf_decisions, truths),
        hier_acc=hier_acc(decisions, truths, t),
        depth=avg_depth(decisions, truths, t),
        leaf_freq=leaf_freq(decisions),
        rejection_rate=rejection_rate(decisions, t),
    )


def report(decisions: Sequence[Decision], truths: Sequence[int], split: Optional[PopularitySplit], t: Taxonomy,
           leaf_decisions: Optional[Sequence[Decision]] = None,
           convention: CpbConvention = CpbConvention.LITERAL) -> MetricsReport:
    """All metrics overall and per popularity bucket; empty buckets are reported as absent"""
    _aligned(decisions, truths)
    leaf_decisions = decisions if leaf_decisions is None else leaf_decisions
    _aligned(leaf_decisions, truths)
    convention = CpbConvention(convention)
    truths = [int(y) for y in truths]

    overall = _split_metrics(decisions, leaf_decisions, truths, t, convention)
    per_split: Dict[str, Optional[SplitMetrics]] = {ALL: overall}
    if split is not None:
        for bucket in BUCKETS:
            idx = [i for i, y in enumerate(truths) if split.bucket(y) == bucket]
            if not idx:
                logger.warning(f"No test samples in the {bucket}-shot bucket")
                per_split[bucket] = None
                continue
            per_split[bucket] = _split_metrics(
                [decisions[i] for i in idx], [leaf_decisions[i] for i in idx], [truths[i] for i in idx], t, convention
            )

    return MetricsReport(
        cpb=overall.cpb,
        cpb_normalized=overall.cpb_normalized,
        leaf_acc=overall.leaf_acc,
        hier_acc=overall.hier_acc,
        depth=overall.depth,
        leaf_freq=overall.leaf_freq,
        rejection_rate=overall.rejection_rate,
        n_samples=overall.n_samples,
        cpb_convention=convention.value,
        per_split=per_split,
    )
