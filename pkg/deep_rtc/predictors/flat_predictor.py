from typing import List

import numpy as np

from ..decision import Decision, Hop
from .base_predictor import BasePredictor, FlatHeadMixin


class FlatRejectPredictor(FlatHeadMixin, BasePredictor):
    """Flat realistic predictor: accept the argmax leaf or reject everything at the root"""

    inference = "-"

    def predict_many(self, X: np.ndarray, gamma: float) -> List[Decision]:
        self._check_gamma(gamma)
        probs = self.leaf_posteriors(X)
        best = probs.argmax(axis=1)
        scores = probs[np.arange(len(best)), best]
        decisions = []
        for j, score in zip(best, scores):
            leaf = self.t.leaf_ids[int(j)]
            if score >= gamma:
                hop, exit_node = Hop(self.t.root, float(score), leaf), leaf
            else:
                hop, exit_node = Hop(self.t.root, float(score), None), self.t.root
            decisions.append(Decision(exit_node=exit_node, path=(hop,), at_leaf=exit_node != self.t.root,
                                      gamma_used=gamma))
        return decisions
