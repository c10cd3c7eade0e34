"""
Feature-table datasets, long-tailed subsampling and the synthetic
hierarchical Gaussian benchmark.
"""
import csv
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    ConfigError,
    DatasetError,
    InsufficientSamplesError,
    InvalidNodeError,
    RaggedRowError,
    UnknownLabelError,
)
from .outputs import OutputFiles
from .taxonomy import Taxonomy, format_tree, write_taxonomy

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    ids: Tuple[str, ...]
    split_tags: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(self.ids))
        if features.ndim != 2 or features.shape[0] < 1:
            raise DatasetError(f"Features must be a non-empty M x d matrix, got shape {features.shape}")
        if labels.shape != (features.shape[0],) or len(self.ids) != features.shape[0]:
            raise DatasetError("features, labels and ids must have the same length")
        if not np.all(np.isfinite(features)):
            raise DatasetError("Features contain NaN or Inf")
        if self.split_tags is not None:
            tags = tuple(self.split_tags)
            if len(tags) != features.shape[0]:
                raise DatasetError("One split tag per sample is required")
            unknown = set(tags) - set(SPLIT_TAGS)
            if unknown:
                raise DatasetError(f"Unknown split tags: {sorted(unknown)}")
            object.__setattr__(self, "split_tags", tags)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        tags = None if self.split_tags is None else tuple(self.split_tags[i] for i in indices)
        return Dataset(self.features[indices], self.labels[indices], tuple(self.ids[i] for i in indices), tags)

    def with_tag(self, tag: str) -> "Dataset":
        return Dataset(self.features, self.labels, self.ids, (tag,) * len(self))

    def check_labels(self, t: Taxonomy) -> None:
        leaves = set(t.leaf_ids)
        bad = sorted({int(y) for y in self.labels} - leaves)
        if bad:
            raise UnknownLabelError(f"Labels are not taxonomy leaves: {bad}")


# -- file formats ------------------------------------------------------------

def _rows(path: str) -> Iterable[Tuple[int, List[str]]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            for line_no, row in enumerate(csv.reader(handle), start=1):
                if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                    continue
                yield line_no, [cell.strip() for cell in row]
    except csv.Error as error:
        raise DatasetError(f"{path}: malformed CSV: {error}") from error
    except UnicodeDecodeError as error:
        raise DatasetError(f"{path} is not valid UTF-8: {error}") from error


def load_splits(path: str) -> Dict[str, str]:
    splits = {}
    for line_no, row in _rows(path):
        if len(row) != 2:
            raise RaggedRowError(f"{path}:{line_no}: expected 'id,tag'")
        splits[row[0]] = row[1]
    return splits


def load_dataset(features_path: str, t: Taxonomy, splits_path: Optional[str] = None,
                 default_tag: Optional[str] = None) -> Dataset:
    """Read 'id,label,x1..xd' rows; labels must name taxonomy leaves"""
    ids, labels, rows = [], [], []
    width = None
    for line_no, row in _rows(features_path):
        if len(row) < 3:
            raise RaggedRowError(f"{features_path}:{line_no}: need an id, a label and at least one feature")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise RaggedRowError(f"{features_path}:{line_no}: {len(row)} fields, expected {width}")
        try:
            node = t.node_id(row[1])
        except InvalidNodeError:
            raise UnknownLabelError(f"{features_path}:{line_no}: unknown label {row[1]!r}") from None
        if not t.is_leaf(node):
            raise UnknownLabelError(f"{features_path}:{line_no}: label {row[1]!r} is not a leaf")
        try:
            rows.append([float(v) for v in row[2:]])
        except ValueError:
            raise DatasetError(f"{features_path}:{line_no}: non-numeric feature value") from None
        ids.append(row[0])
        labels.append(node)

    if not rows:
        raise DatasetError(f"{features_path} holds no samples")
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{features_path} repeats sample ids")

    tags = None
    if splits_path:
        splits = load_splits(splits_path)
        missing = [i for i in ids if i not in splits]
        if missing:
            raise DatasetError(f"{len(missing)} samples have no split tag, e.g. {missing[0]!r}")
        tags = tuple(splits[i] for i in ids)
    elif default_tag:
        tags = (default_tag,) * len(ids)

    dataset = Dataset(np.array(rows), np.array(labels), tuple(ids), tags)
    logger.info(f"Loaded {len(dataset)} samples of dimension {dataset.dim} from {features_path}")
    return dataset


def save_dataset(dataset: Dataset, path: str, t: Taxonomy, splits_path: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["# id", "label"] + [f"x{j}" for j in range(dataset.dim)])
        for sample_id, label, x in zip(dataset.ids, dataset.labels, dataset.features):
            writer.writerow([sample_id, t.name(int(label))] + [repr(float(v)) for v in x])
    if splits_path and dataset.split_tags is not None:
        write_splits([dataset], splits_path)


def write_splits(datasets: Sequence[Dataset], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["# id", "tag"])
        for dataset in datasets:
            for sample_id, tag in zip(dataset.ids, dataset.split_tags):
                writer.writerow([sample_id, tag])


# -- counts and long-tail profiles ---------------------------------------------

def label_counts(dataset: Dataset, t: Taxonomy) -> Dict[int, int]:
    counts = {leaf: 0 for leaf in t.leaf_ids}
    for y in dataset.labels:
        counts[int(y)] += 1
    return counts


def split_counts(dataset: Dataset, t: Taxonomy) -> Dict[int, int]:
    """Per-leaf counts over train-tagged samples; leaves without samples report 0"""
    if dataset.split_tags is None:
        raise DatasetError("Dataset has no split tags")
    counts = {leaf: 0 for leaf in t.leaf_ids}
    for y, tag in zip(dataset.labels, dataset.split_tags):
        if tag == "train":
            counts[int(y)] += 1
    return counts


def longtail_profile(n_classes: int, n_max: int, imbalance_factor: float) -> np.ndarray:
    """Exponential class sizes by popularity rank: n_max * factor ** (rank / (C - 1))"""
    if not 0.0 < imbalance_factor <= 1.0:
        raise ConfigError(f"imbalance factor must lie in (0, 1], got {imbalance_factor}")
    if n_classes == 1:
        return np.array([n_max])
    ranks = np.arange(n_classes)
    sizes = np.rint(n_max * imbalance_factor ** (ranks / (n_classes - 1))).astype(np.int64)
    return np.maximum(sizes, 1)


def make_longtail(dataset: Dataset, imbalance_factor: float, seed: int, t: Taxonomy,
                  n_max: Optional[int] = None) -> Dataset:
    """Subsample classes to an exponential profile; class popularity ranks are shuffled by seed"""
    rng = np.random.default_rng(seed)
    by_class = {leaf: np.flatnonzero(dataset.labels == leaf) for leaf in t.leaf_ids}
    n_max = max(len(v) for v in by_class.values()) if n_max is None else n_max
    profile = longtail_profile(len(t.leaf_ids), n_max, imbalance_factor)
    ranks = rng.permutation(len(t.leaf_ids))

    keep = []
    for leaf, rank in zip(t.leaf_ids, ranks):
        available = by_class[leaf]
        target = int(profile[rank])
        if len(available) < target:
            raise InsufficientSamplesError(
                f"Class {t.name(leaf)!r} has {len(available)} samples, profile needs {target}"
            )
        keep.append(rng.choice(available, size=target, replace=False))

    indices = np.sort(np.concatenate(keep))
    logger.info(f"Long-tailed subsample: {len(indices)} of {len(dataset)} samples (factor {imbalance_factor})")
    return dataset.subset(indices)


# -- synthetic benchmark ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    branching: Tuple[int, ...] = (4, 4, 4)
    feature_dim: int = 32
    class_sep: float = 1.0
    # step scale shrinks by this factor per level, so coarse classes are easier
    level_decay: float = 0.5
    noise_sd: float = 1.0
    imbalance_factor: float = 0.01
    n_max: int = 200
    seed: int = 0
    test_per_class: int = 20
    val_fraction: float = 0.1

    def __post_init__(self):
        if not self.branching or any(b < 2 for b in self.branching):
            raise ConfigError(f"Every level needs a branching factor >= 2, got {self.branching}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.class_sep <= 0 or self.noise_sd <= 0 or self.level_decay <= 0:
            raise ConfigError("class_sep, noise_sd and level_decay must be positive")
        if not 0.0 < self.imbalance_factor <= 1.0:
            raise ConfigError("imbalance_factor must lie in (0, 1]")
        if self.imbalance_factor * self.n_max < 1:
            raise ConfigError("imbalance_factor * n_max must be at least 1")
        if self.test_per_class < 1:
            raise ConfigError("test_per_class must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")


class SyntheticBenchmark(NamedTuple):
    taxonomy: Taxonomy
    train: Dataset
    val: Dataset
    test: Dataset


def taxonomy_from_shape(branching: Sequence[int]) -> Taxonomy:
    """Complete tree: internal nodes g<path>, leaves c<path>, indices zero-padded"""
    width = len(str(max(branching) - 1))
    edges = []
    frontier = [("root", ())]
    for level, factor in enumerate(branching):
        is_leaf_level = level == len(branching) - 1
        next_frontier = []
        for parent, path in frontier:
            for i in range(factor):
                child_path = path + (i,)
                prefix = "c" if is_leaf_level else "g"
                child = prefix + ".".join(str(j).zfill(width) for j in child_path)
                edges.append((child, parent))
                next_frontier.append((child, child_path))
        frontier = next_frontier
    return Taxonomy.from_edges(edges)


def node_means(t: Taxonomy, cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Random walk from the root: each level adds a Gaussian step, so siblings share their ancestors' offset"""
    means = np.zeros((len(t.nodes), cfg.feature_dim))
    for record in t.nodes[1:]:
        scale = cfg.class_sep * cfg.level_decay ** (record.depth - 1)
        means[record.id] = means[record.parent] + rng.normal(0.0, scale, size=cfg.feature_dim)
    return means


def synth_generate(cfg: SyntheticConfig) -> SyntheticBenchmark:
    rng = np.random.default_rng(cfg.seed)
    t = taxonomy_from_shape(cfg.branching)
    means = node_means(t, cfg, rng)
    profile = longtail_profile(t.n_leaves, cfg.n_max, cfg.imbalance_factor)
    ranks = rng.permutation(t.n_leaves)

    def draw(leaf: int, n: int) -> np.ndarray:
        return means[leaf] + rng.normal(0.0, cfg.noise_sd, size=(n, cfg.feature_dim))

    parts = {tag: ([], []) for tag in SPLIT_TAGS}
    for leaf, rank in zip(t.leaf_ids, ranks):
        n_train = int(profile[rank])
        n_val = min(int(np.floor(cfg.val_fraction * n_train)), n_train - 1)
        if n_train - n_val < 2:
            logger.warning(f"Class {t.name(leaf)!r} keeps {n_train - n_val} training sample(s)")
        samples = draw(leaf, n_train)
        parts["train"][0].append(samples[n_val:])
        parts["val"][0].append(samples[:n_val])
        parts["test"][0].append(draw(leaf, cfg.test_per_class))
        parts["train"][1].extend([leaf] * (n_train - n_val))
        parts["val"][1].extend([leaf] * n_val)
        parts["test"][1].extend([leaf] * cfg.test_per_class)

    datasets = {}
    for tag, (blocks, labels) in parts.items():
        if not labels:
            raise InsufficientSamplesError(f"Synthetic {tag} split is empty; raise n_max or val_fraction")
        features = np.concatenate([b for b in blocks if len(b)], axis=0)
        ids = tuple(f"{tag}-{i:06d}" for i in range(len(labels)))
        datasets[tag] = Dataset(features, np.array(labels), ids, (tag,) * len(labels))

    logger.info(
        f"Synthetic benchmark: {t.n_leaves} leaves, train/val/test = "
        f"{len(datasets['train'])}/{len(datasets['val'])}/{len(datasets['test'])}"
    )
    return SyntheticBenchmark(t, datasets["train"], datasets["val"], datasets["test"])


def write_benchmark(bench: SyntheticBenchmark, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_taxonomy(bench.taxonomy, os.path.join(out_dir, OutputFiles.TAXONOMY))
    with open(os.path.join(out_dir, OutputFiles.TAXONOMY_TREE), "w", encoding="utf-8") as handle:
        handle.write(format_tree(bench.taxonomy))
    for name, dataset in ((OutputFiles.TRAIN, bench.train), (OutputFiles.VAL, bench.val), (OutputFiles.TEST, bench.test)):
        save_dataset(dataset, os.path.join(out_dir, name), bench.taxonomy)
    write_splits([bench.train, bench.val, bench.test], os.path.join(out_dir, OutputFiles.SPLITS))
