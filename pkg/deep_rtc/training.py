"""
Losses of the taxonomic head, their analytic gradients and the SGD loop with
stochastic tree sampling.

For one label set with codewords Q, logits are Z = H theta Q and the mean
cross-entropy has gradient dtheta = H^T (P - Y) Q^T / M.
"""
import csv
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import log_softmax

from .data import Dataset
from .exceptions import ConfigError, DatasetError, DivergenceError
from .model import (
    FeatureMap,
    FeatureMapMode,
    NodeParams,
    forward_labelset,
    init_feature_map,
    init_params,
    synthesize_weights,
)
from .taxonomy import (
    DEFAULT_MAX_CUTS,
    LabelSet,
    Taxonomy,
    enumerate_all_cuts,
    project_label,
    sample_cut,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    p: float = 0.5
    lam: float = 1.0
    lr: float = 0.1
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0
    init_scale: float = 0.01
    fmap: str = "identity"
    feature_dim: Optional[int] = None
    # ablation switches: without sampling the lambda-term always uses the leaf set
    sample_cuts: bool = True
    use_ncl: bool = True
    max_cuts: int = DEFAULT_MAX_CUTS

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p must lie in [0, 1], got {self.p}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.weight_decay < 0 or self.init_scale < 0:
            raise ConfigError("weight_decay and init_scale must be non-negative")
        try:
            mode = FeatureMapMode(self.fmap)
        except ValueError:
            raise ConfigError(f"Unknown feature map {self.fmap!r}") from None
        if mode is FeatureMapMode.LINEAR and not self.feature_dim:
            raise ConfigError("A linear feature map needs feature_dim")


ABLATION_PRESETS: Dict[str, Dict[str, object]] = {
    "flat": {"lam": 0.0, "sample_cuts": False, "use_ncl": True},
    "pi": {"sample_cuts": False, "use_ncl": False},
    "pi+sts": {"use_ncl": False},
    "pi+ncl": {"lam": 0.0},
    "deep-rtc": {},
}


def apply_preset(cfg: TrainConfig, name: str) -> TrainConfig:
    try:
        changes = dict(ABLATION_PRESETS[name])
    except KeyError:
        raise ConfigError(f"Unknown preset {name!r}; choose from {sorted(ABLATION_PRESETS)}") from None
    if name in ("pi", "pi+sts") and cfg.lam == 0:
        changes["lam"] = 1.0
    return replace(cfg, **changes)


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    l_sts: float
    l_ncl: float
    l_total: float
    cut_used: Optional[LabelSet] = None


@dataclass
class Gradients:
    theta: np.ndarray
    fmap_weight: Optional[np.ndarray] = None
    fmap_bias: Optional[np.ndarray] = None

    def arrays(self) -> List[np.ndarray]:
        return [a for a in (self.theta, self.fmap_weight, self.fmap_bias) if a is not None]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class EpochLog:
    epoch: int
    l_sts: float
    l_ncl: float
    l_total: float
    wall_time: float


@dataclass
class TrainResult:
    params: NodeParams
    fmap: FeatureMap
    taxonomy: Taxonomy
    history: List[EpochLog] = field(default_factory=list)


def _as_batch(batch) -> Batch:
    if isinstance(batch, Dataset):
        batch = Batch(batch.features, batch.labels)
    features = np.atleast_2d(np.asarray(batch[0], dtype=np.float64))
    labels = np.atleast_1d(np.asarray(batch[1], dtype=np.int64))
    if len(labels) == 0:
        raise DatasetError("Empty batch")
    return Batch(features, labels)


def _softmax_xent(h: np.ndarray, weights: np.ndarray, targets: np.ndarray,
                  sample_weights: np.ndarray) -> Tuple[float, np.ndarray]:
    """Weighted cross-entropy and its gradient with respect to the logits"""
    log_probs = log_softmax(h @ weights, axis=1)
    rows = np.arange(len(targets))
    loss = float(-(sample_weights * log_probs[rows, targets]).sum())
    dlogits = np.exp(log_probs)
    dlogits[rows, targets] -= 1.0
    dlogits *= sample_weights[:, None]
    return loss, dlogits


def _projected_targets(t: Taxonomy, labels: np.ndarray, ls: LabelSet) -> np.ndarray:
    position = {node: j for j, node in enumerate(ls.members)}
    return np.array([position[project_label(t, int(y), ls)] for y in labels], dtype=np.int64)


class _LossTerms:
    """Accumulates losses and gradients with respect to theta and to the features h"""

    def __init__(self, h: np.ndarray, params: NodeParams, t: Taxonomy):
        self.h = h
        self.params = params
        self.t = t
        self.d_theta = np.zeros_like(params.theta)
        self.d_h = np.zeros_like(h)

    def sts(self, labels: np.ndarray, cut: LabelSet, scale: float) -> float:
        q = self.t.codeword_matrix(cut)
        weights = synthesize_weights(self.params, q)
        targets = _projected_targets(self.t, labels, cut)
        loss, dlogits = _softmax_xent(self.h, weights, targets, np.full(len(labels), 1.0 / len(labels)))
        if scale:
            self.d_theta += scale * (self.h.T @ dlogits) @ q.data.T
            self.d_h += scale * (dlogits @ weights.T)
        return loss

    def ncl(self, labels: np.ndarray, scale: float) -> float:
        t = self.t
        groups: Dict[int, Tuple[List[int], List[int]]] = defaultdict(lambda: ([], []))
        path_lengths = np.empty(len(labels))
        for i, y in enumerate(labels):
            path = t.decision_path(int(y))
            path_lengths[i] = len(path)
            for node, position in path:
                groups[node][0].append(i)
                groups[node][1].append(position)

        sample_weights = 1.0 / (len(labels) * path_lengths)
        total = 0.0
        for node in sorted(groups):
            rows, targets = (np.asarray(v, dtype=np.int64) for v in groups[node])
            columns = [c - 1 for c in t.children(node)]
            weights = self.params.theta[:, columns]
            h = self.h[rows]
            loss, dlogits = _softmax_xent(h, weights, targets, sample_weights[rows])
            total += loss
            if scale:
                self.d_theta[:, columns] += scale * (h.T @ dlogits)
                self.d_h[rows] += scale * (dlogits @ weights.T)
        return total


def xent_loss(x: np.ndarray, y_leaf: int, ls: LabelSet, params: NodeParams, fmap: FeatureMap, t: Taxonomy) -> float:
    """-log posterior of the label set member on y_leaf's path"""
    target = ls.index(project_label(t, y_leaf, ls))
    posterior = forward_labelset(x, ls, params, fmap, t)
    return float(-log_softmax(posterior.logits)[target])


def sts_loss(batch, params: NodeParams, fmap: FeatureMap, t: Taxonomy, cut: LabelSet) -> float:
    batch = _as_batch(batch)
    return _LossTerms(fmap.apply(batch.features), params, t).sts(batch.labels, cut, scale=0.0)


def ncl_loss(batch, params: NodeParams, fmap: FeatureMap, t: Taxonomy) -> float:
    batch = _as_batch(batch)
    return _LossTerms(fmap.apply(batch.features), params, t).ncl(batch.labels, scale=0.0)


def ensemble_loss(batch, params: NodeParams, fmap: FeatureMap, t: Taxonomy, weighting: str = "uniform",
                  p: float = 0.5, max_cuts: int = DEFAULT_MAX_CUTS) -> float:
    """
    Brute-force average of the cut losses over every cut of the taxonomy.

    weighting="uniform" averages with weight 1/|cuts|; weighting="bernoulli"
    weights each cut by its sampling probability under rate p, which is the
    expectation that stochastic tree sampling estimates.
    """
    if weighting not in ("uniform", "bernoulli"):
        raise ValueError(f"Unknown weighting {weighting!r}")
    batch = _as_batch(batch)
    cuts = enumerate_all_cuts(t, p=p, max_cuts=max_cuts)
    terms = _LossTerms(fmap.apply(batch.features), params, t)
    losses = np.array([terms.sts(batch.labels, c.label_set, scale=0.0) for c in cuts])
    if weighting == "uniform":
        return float(losses.mean())
    return float(np.dot([c.probability for c in cuts], losses))


def grad_total(batch, params: NodeParams, fmap: FeatureMap, cfg: TrainConfig, cut: LabelSet,
               t: Taxonomy) -> Tuple[LossBreakdown, Gradients]:
    """Loss breakdown and exact gradient of l_ncl + lambda * l_sts"""
    batch = _as_batch(batch)
    h = fmap.apply(batch.features)
    terms = _LossTerms(h, params, t)
    l_sts = terms.sts(batch.labels, cut, scale=cfg.lam)
    l_ncl = terms.ncl(batch.labels, scale=1.0) if cfg.use_ncl else 0.0
    breakdown = LossBreakdown(l_sts=l_sts, l_ncl=l_ncl, l_total=l_ncl + cfg.lam * l_sts, cut_used=cut)

    grads = Gradients(theta=terms.d_theta)
    if fmap.trainable:
        grads.fmap_weight = batch.features.T @ terms.d_h
        grads.fmap_bias = terms.d_h.sum(axis=0)

    if not np.isfinite(breakdown.l_total) or not grads.is_finite():
        logger.error(f"Non-finite loss or gradient: {breakdown}")
        raise DivergenceError(f"Training diverged: l_total={breakdown.l_total}")
    return breakdown, grads


def sgd_step(params: NodeParams, fmap: FeatureMap, grads: Gradients, lr: float, weight_decay: float = 0.0) -> None:
    params.theta -= lr * (grads.theta + weight_decay * params.theta)
    if fmap.trainable:
        fmap.weight -= lr * (grads.fmap_weight + weight_decay * fmap.weight)
        fmap.bias -= lr * grads.fmap_bias


class Trainer:
    """Mini-batch SGD with one sampled cut per batch"""

    def __init__(self, t: Taxonomy, cfg: TrainConfig):
        self.t = t
        self.cfg = cfg
        self.logger = logging.getLogger(self.__class__.__name__)

    def _cut(self, rng: np.random.Generator) -> LabelSet:
        if self.cfg.sample_cuts:
            return sample_cut(self.t, self.cfg.p, rng)
        return self.t.full_leaves()

    def fit(self, dataset: Dataset) -> TrainResult:
        cfg, t = self.cfg, self.t
        dataset.check_labels(t)
        rng = np.random.default_rng(cfg.seed)
        fmap = init_feature_map(FeatureMapMode(cfg.fmap), dataset.dim, cfg.feature_dim, rng)
        params = init_params(cfg.seed, cfg.init_scale, fmap.out_dim, t.n_nodes, rng=rng)
        result = TrainResult(params=params, fmap=fmap, taxonomy=t)

        self.logger.info(
            f"Training on {len(dataset)} samples, {t.n_nodes} nodes: p={cfg.p}, lambda={cfg.lam}, "
            f"lr={cfg.lr}, epochs={cfg.epochs}, batch={cfg.batch_size}, sts={cfg.sample_cuts}, ncl={cfg.use_ncl}"
        )
        n = len(dataset)
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            sums = np.zeros(3)
            order = rng.permutation(n)
            for first in range(0, n, cfg.batch_size):
                idx = order[first:first + cfg.batch_size]
                cut = self._cut(rng)
                try:
                    breakdown, grads = grad_total(
                        Batch(dataset.features[idx], dataset.labels[idx]), params, fmap, cfg, cut, t
                    )
                except DivergenceError:
                    self.logger.error(f"Divergence at epoch {epoch}, batch starting at {first}; lower the lr")
                    raise
                sgd_step(params, fmap, grads, cfg.lr, cfg.weight_decay)
                sums += len(idx) * np.array([breakdown.l_sts, breakdown.l_ncl, breakdown.l_total])
                self.logger.debug(f"epoch {epoch} batch {first // cfg.batch_size}: {breakdown.l_total:.6f}")

            l_sts, l_ncl, l_total = sums / n
            log = EpochLog(epoch, l_sts, l_ncl, l_total, time.perf_counter() - start)
            result.history.append(log)
            self.logger.info(f"Epoch {epoch}/{cfg.epochs}: l_sts={l_sts:.4f} l_ncl={l_ncl:.4f} l_total={l_total:.4f}")
        return result


def train(dataset: Dataset, t: Taxonomy, cfg: TrainConfig) -> TrainResult:
    return Trainer(t, cfg).fit(dataset)


def to_flat(dataset: Dataset, t: Taxonomy, flat: Taxonomy) -> Dataset:
    """Relabel a dataset from t's leaf ids to the flattened taxonomy's leaf ids"""
    labels = np.array([flat.leaf_ids[t.leaf_index(int(y))] for y in dataset.labels])
    return Dataset(dataset.features, labels, dataset.ids, dataset.split_tags)


def train_flat(dataset: Dataset, t: Taxonomy, cfg: TrainConfig) -> TrainResult:
    """Standard softmax classifier over the leaves; theta columns follow t's leaf order"""
    flat = t if t.is_flat() else t.flattened()
    return train(to_flat(dataset, t, flat), flat, apply_preset(cfg, "flat"))


def write_training_log(history: List[EpochLog], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "l_sts", "l_ncl", "l_total", "wall_time"])
        for log in history:
            writer.writerow([log.epoch, f"{log.l_sts:.10g}", f"{log.l_ncl:.10g}", f"{log.l_total:.10g}",
                             f"{log.wall_time:.4f}"])
