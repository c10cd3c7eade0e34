from typing import List

import numpy as np

from ..decision import Decision, Hop
from .base_predictor import BasePredictor, FlatHeadMixin


class BottomUpPredictor(FlatHeadMixin, BasePredictor):
    """
    Recursive hierarchical classifier: flat leaf posteriors are summed up the
    tree into node masses, then the walk descends to the heaviest child while
    that child's mass reaches gamma.
    """

    inference = "BU"

    def node_masses(self, X: np.ndarray) -> np.ndarray:
        """Samples x nodes matrix; a parent's mass is the sum of its children's"""
        leaf_probs = self.leaf_posteriors(X)
        masses = np.zeros((leaf_probs.shape[0], len(self.t.nodes)))
        for j, leaf in enumerate(self.t.leaf_ids):
            masses[:, leaf] = leaf_probs[:, j]
        for record in reversed(self.t.nodes):
            if record.children:
                masses[:, record.id] = masses[:, list(record.children)].sum(axis=1)
        return masses

    def predict_many(self, X: np.ndarray, gamma: float) -> List[Decision]:
        self._check_gamma(gamma)
        masses = self.node_masses(X)
        t = self.t
        decisions = []
        for row in masses:
            node = t.root
            hops = []
            while not t.is_leaf(node):
                children = t.children(node)
                child_mass = row[list(children)]
                best = int(np.argmax(child_mass))
                score = float(child_mass[best])
                if score < gamma:
                    hops.append(Hop(node, score, None))
                    break
                hops.append(Hop(node, score, children[best]))
                node = children[best]
            decisions.append(Decision(exit_node=node, path=tuple(hops), at_leaf=t.is_leaf(node), gamma_used=gamma))
        return decisions
