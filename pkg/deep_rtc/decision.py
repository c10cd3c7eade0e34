"""Per-sample outcomes of taxonomic inference."""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .model import Posterior

# Smallest level above every attainable confidence: everything exits at the root.
MAX_COMPETENCE = float(np.nextafter(1.0, 2.0))


@dataclass(frozen=True)
class CompetenceLevel:
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma <= MAX_COMPETENCE:
            raise ValueError(f"Competence level must lie in [0, 1] or be the reject-all level, got {self.gamma}")


@dataclass(frozen=True)
class Hop:
    """One node decision: confidence of the best child, and that child if the walk descended"""

    node: int
    confidence: float
    chosen_child: Optional[int]


@dataclass(frozen=True)
class Decision:
    exit_node: int
    path: Tuple[Hop, ...]
    at_leaf: bool
    gamma_used: float

    @property
    def exit_confidence(self) -> float:
        return self.path[-1].confidence if self.path else 1.0


def confidence(post: Posterior) -> float:
    """Maximum posterior probability"""
    return float(np.max(post.probs))
