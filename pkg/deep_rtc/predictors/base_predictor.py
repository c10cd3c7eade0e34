import abc
import logging
from typing import List, Optional

import numpy as np
from scipy.special import softmax

from ..decision import MAX_COMPETENCE, Decision
from ..exceptions import DimensionMismatchError
from ..model import FeatureMap, NodeParams
from ..taxonomy import Taxonomy


class BasePredictor(abc.ABC):
    """Base class for all predictors with common functionality"""

    # "TD" for top-down probabilities, "BU" for bottom-up accumulation
    inference = "TD"

    def __init__(self, t: Taxonomy, params: NodeParams, fmap: FeatureMap,
                 logger: Optional[logging.Logger] = None):
        self.t = t
        self.params = params
        self.fmap = fmap
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def predict(self, x: np.ndarray, gamma: float) -> Decision:
        """Decision for a single feature vector"""
        return self.predict_many(np.atleast_2d(x), gamma)[0]

    @abc.abstractmethod
    def predict_many(self, X: np.ndarray, gamma: float) -> List[Decision]:
        """Decisions for every row of X at competence level gamma"""

    def _check_gamma(self, gamma: float) -> None:
        if not 0.0 <= gamma <= MAX_COMPETENCE:
            raise ValueError(f"Competence level must lie in [0, 1] or be the reject-all level, got {gamma}")


class FlatHeadMixin:
    """Shared leaf-posterior computation for predictors built on a flat classifier"""

    def leaf_posteriors(self, X: np.ndarray) -> np.ndarray:
        if self.params.n_nodes != self.t.n_leaves:
            raise DimensionMismatchError(
                f"Flat predictor needs one parameter column per leaf ({self.t.n_leaves}), got {self.params.n_nodes}"
            )
        return softmax(self.fmap.apply(np.atleast_2d(X)) @ self.params.theta, axis=1)
