import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_checker import BaseChecker, CheckResult
from gradcheck import grad_check
from losses import ClassWeights, weighted_bce_multilabel, weighted_cross_entropy


class LossGradientChecker(BaseChecker):
    @property
    def name(self) -> str:
        return "Weighted Loss Gradient"

    def check(self, rng: np.random.Generator) -> CheckResult:
        # probabilities well inside the clamp
        probs = rng.uniform(0.05, 0.95, size=(8, 14))
        targets = (rng.random((8, 14)) < 0.3).astype(np.float64)
        weights = ClassWeights(rng.uniform(0.5, 5.0, size=14))

        errors = {
            "softmax weighted cross-entropy": grad_check(
                lambda p: weighted_cross_entropy(p, targets, weights), [probs], eps=self.eps
            ),
            "weighted multilabel bce": grad_check(
                lambda p: weighted_bce_multilabel(p, targets, weights), [probs], eps=self.eps
            ),
        }
        return self.grade(errors)
