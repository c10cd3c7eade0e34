"""
Parameter-inheritance softmax head.

All predictors are synthesized from one matrix of per-node residual
parameters: the weights of a label set Y are ``W_Y = theta @ Q_Y``.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from .exceptions import DimensionMismatchError, InvalidNodeError, NonFiniteError
from .taxonomy import CodewordMatrix, LabelSet, Taxonomy

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_INIT_SCALE = 0.01


class FeatureMapMode(str, Enum):
    IDENTITY = "identity"
    LINEAR = "linear"


class Structure(str, Enum):
    HIERARCHICAL = "hierarchical"
    FLAT = "flat"


def _require_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{what} contains NaN or Inf entries")


@dataclass
class NodeParams:
    """theta: k x |N|, column n-1 holds the residual vector of node n"""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise DimensionMismatchError(f"theta must be 2-D, got shape {self.theta.shape}")
        _require_finite(self.theta, "theta")

    @property
    def k(self) -> int:
        return self.theta.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.theta.shape[1]

    def copy(self) -> "NodeParams":
        return NodeParams(self.theta.copy())


@dataclass
class FeatureMap:
    """h(x): identity, or one affine map x @ weight + bias"""

    mode: FeatureMapMode
    in_dim: int
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mode = FeatureMapMode(self.mode)
        if self.mode is FeatureMapMode.IDENTITY:
            if self.weight is not None or self.bias is not None:
                raise DimensionMismatchError("identity feature map takes no weight or bias")
            return
        if self.weight is None or self.bias is None:
            raise DimensionMismatchError("linear feature map needs both weight and bias")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.in_dim:
            raise DimensionMismatchError(f"weight shape {self.weight.shape} does not match input dim {self.in_dim}")
        if self.bias.shape != (self.weight.shape[1],):
            raise DimensionMismatchError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        _require_finite(self.weight, "feature map weight")
        _require_finite(self.bias, "feature map bias")

    @classmethod
    def identity(cls, d: int) -> "FeatureMap":
        return cls(FeatureMapMode.IDENTITY, d)

    @classmethod
    def linear(cls, d: int, k: int, rng: np.random.Generator) -> "FeatureMap":
        limit = np.sqrt(6.0 / (d + k))
        return cls(FeatureMapMode.LINEAR, d, rng.uniform(-limit, limit, size=(d, k)), np.zeros(k))

    @property
    def trainable(self) -> bool:
        return self.mode is FeatureMapMode.LINEAR

    @property
    def out_dim(self) -> int:
        return self.in_dim if self.mode is FeatureMapMode.IDENTITY else self.weight.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatchError(f"Feature dimension {x.shape[-1]} != expected {self.in_dim}")
        _require_finite(x, "input features")
        if self.mode is FeatureMapMode.IDENTITY:
            return x
        return x @ self.weight + self.bias

    def copy(self) -> "FeatureMap":
        if self.mode is FeatureMapMode.IDENTITY:
            return FeatureMap.identity(self.in_dim)
        return FeatureMap(self.mode, self.in_dim, self.weight.copy(), self.bias.copy())


@dataclass(frozen=True)
class Posterior:
    probs: np.ndarray
    logits: np.ndarray
    label_set: LabelSet

    def __post_init__(self):
        if self.probs.shape[-1] != len(self.label_set):
            raise DimensionMismatchError("posterior length does not match its label set")


def synthesize_weights(params: NodeParams, q: CodewordMatrix) -> np.ndarray:
    """W_Y = theta @ Q_Y, shape k x |Y|"""
    if q.data.shape[0] != params.n_nodes:
        raise DimensionMismatchError(
            f"Codeword matrix has {q.data.shape[0]} rows, parameters have {params.n_nodes} nodes"
        )
    return params.theta @ q.data


def node_weights(params: NodeParams, t: Taxonomy, n: int) -> np.ndarray:
    """Node-conditional weights over C(n): ancestor rows of the codewords are zeroed"""
    if t.is_leaf(n):
        raise InvalidNodeError(f"Leaf {t.name(n)!r} has no children to decide between")
    if params.n_nodes != t.n_nodes:
        raise DimensionMismatchError(f"Parameters cover {params.n_nodes} nodes, taxonomy has {t.n_nodes}")
    return params.theta[:, [c - 1 for c in t.children(n)]]


def _check_head(params: NodeParams, fmap: FeatureMap) -> None:
    if fmap.out_dim != params.k:
        raise DimensionMismatchError(f"Feature map emits {fmap.out_dim} dims, parameters expect k={params.k}")


def _posterior(h: np.ndarray, weights: np.ndarray, label_set: LabelSet) -> Posterior:
    logits = h @ weights
    return Posterior(probs=softmax(logits, axis=-1), logits=logits, label_set=label_set)


def forward_labelset(x: np.ndarray, y: LabelSet, params: NodeParams, fmap: FeatureMap, t: Taxonomy) -> Posterior:
    """Posterior over label set y; x may be one sample or a batch of rows"""
    _check_head(params, fmap)
    weights = synthesize_weights(params, t.codeword_matrix(y))
    return _posterior(fmap.apply(x), weights, y)


def forward_node(x: np.ndarray, n: int, params: NodeParams, fmap: FeatureMap, t: Taxonomy) -> Posterior:
    """Posterior over the children of internal node n"""
    _check_head(params, fmap)
    return _posterior(fmap.apply(x), node_weights(params, t, n), t.node_children(n))


def init_params(seed: int, scale: float, k: int, n_nodes: int,
                rng: Optional[np.random.Generator] = None) -> NodeParams:
    """theta entries iid uniform(-scale, scale); rng overrides seed when given"""
    if scale < 0:
        raise ValueError(f"Initialization scale must be non-negative, got {scale}")
    rng = np.random.default_rng(seed) if rng is None else rng
    return NodeParams(rng.uniform(-scale, scale, size=(k, n_nodes)))


def init_feature_map(mode: FeatureMapMode, d: int, k: Optional[int], rng: np.random.Generator) -> FeatureMap:
    if FeatureMapMode(mode) is FeatureMapMode.IDENTITY:
        return FeatureMap.identity(d)
    if not k:
        raise DimensionMismatchError("linear feature map needs an output dimension")
    return FeatureMap.linear(d, k, rng)


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    params: NodeParams
    fmap: FeatureMap
    node_names: Tuple[str, ...]
    structure: Structure

    def check_against(self, t: Taxonomy) -> None:
        if node_name_order(t) != self.node_names:
            raise DimensionMismatchError("Checkpoint node order does not match the taxonomy")


def node_name_order(t: Taxonomy) -> Tuple[str, ...]:
    return tuple(t.name(n) for n in range(1, t.n_nodes + 1))


def save_checkpoint(path: str, params: NodeParams, fmap: FeatureMap, node_names: Sequence[str],
                    structure: Structure = Structure.HIERARCHICAL) -> None:
    if len(node_names) != params.n_nodes:
        raise DimensionMismatchError("One node name per parameter column is required")
    linear = fmap.mode is FeatureMapMode.LINEAR
    with open(path, "wb") as handle:
        np.savez(
            handle,
            format_version=np.array(CHECKPOINT_VERSION),
            k=np.array(params.k),
            n_nodes=np.array(params.n_nodes),
            node_names=np.array(list(node_names), dtype=str),
            structure=np.array(Structure(structure).value),
            theta=params.theta,
            fmap_mode=np.array(fmap.mode.value),
            fmap_in_dim=np.array(fmap.in_dim),
            fmap_weight=fmap.weight if linear else np.zeros((0, 0)),
            fmap_bias=fmap.bias if linear else np.zeros(0),
        )
    logger.info(f"Checkpoint written to {path} ({params.k} x {params.n_nodes}, {fmap.mode.value} features)")


def load_checkpoint(path: str) -> Checkpoint:
    with np.load(path, allow_pickle=False) as archive:
        version = int(archive["format_version"])
        if version != CHECKPOINT_VERSION:
            raise DimensionMismatchError(f"Unsupported checkpoint version {version}")
        theta = archive["theta"]
        if theta.shape != (int(archive["k"]), int(archive["n_nodes"])):
            raise DimensionMismatchError("Checkpoint theta shape disagrees with its header")
        mode = FeatureMapMode(str(archive["fmap_mode"]))
        in_dim = int(archive["fmap_in_dim"])
        if mode is FeatureMapMode.IDENTITY:
            fmap = FeatureMap.identity(in_dim)
        else:
            fmap = FeatureMap(mode, in_dim, archive["fmap_weight"], archive["fmap_bias"])
        return Checkpoint(
            params=NodeParams(theta),
            fmap=fmap,
            node_names=tuple(str(n) for n in archive["node_names"]),
            structure=Structure(str(archive["structure"])),
        )
