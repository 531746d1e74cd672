import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_checker import BaseChecker, CheckResult
from gradcheck import grad_check
from tensor import ACTIVATIONS, Tensor, activation, mul, reduce_sum


class ActivationGradientChecker(BaseChecker):
    @property
    def name(self) -> str:
        return "Activation Gradient"

    def check(self, rng: np.random.Generator) -> CheckResult:
        # keep relu inputs away from the kink at 0
        magnitude = rng.uniform(0.1, 2.0, size=(3, 5))
        x = magnitude * rng.choice([-1.0, 1.0], size=(3, 5))
        projection = Tensor(rng.standard_normal((3, 5)))

        errors = {}
        for kind in sorted(ACTIVATIONS):
            errors[kind] = grad_check(
                lambda t, kind=kind: reduce_sum(mul(activation(kind, t), projection)),
                [x],
                eps=self.eps,
            )
        return self.grade(errors)
