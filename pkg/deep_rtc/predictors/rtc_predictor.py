from typing import Dict, List

import numpy as np
from scipy.special import softmax

from ..decision import Decision, Hop
from ..model import node_weights
from .base_predictor import BasePredictor


class TopDownPredictor(BasePredictor):
    """Realistic taxonomic prediction: descend while each node decision reaches gamma"""

    def node_posteriors(self, X: np.ndarray) -> Dict[int, np.ndarray]:
        h = self.fmap.apply(np.atleast_2d(X))
        return {n: softmax(h @ node_weights(self.params, self.t, n), axis=1) for n in self.t.internal_ids}

    def root_confidences(self, X: np.ndarray) -> np.ndarray:
        h = self.fmap.apply(np.atleast_2d(X))
        return softmax(h @ node_weights(self.params, self.t, self.t.root), axis=1).max(axis=1)

    def predict_many(self, X: np.ndarray, gamma: float) -> List[Decision]:
        self._check_gamma(gamma)
        posteriors = self.node_posteriors(X)
        return [self.walk(posteriors, i, gamma) for i in range(np.atleast_2d(X).shape[0])]

    def walk(self, posteriors: Dict[int, np.ndarray], i: int, gamma: float) -> Decision:
        t = self.t
        node = t.root
        hops = []
        while not t.is_leaf(node):
            probs = posteriors[node][i]
            best = int(np.argmax(probs))
            score = float(probs[best])
            if score < gamma:
                hops.append(Hop(node, score, None))
                break
            child = t.children(node)[best]
            hops.append(Hop(node, score, child))
            node = child
        return Decision(exit_node=node, path=tuple(hops), at_leaf=t.is_leaf(node), gamma_used=gamma)
