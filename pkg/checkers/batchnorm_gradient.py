import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_checker import BaseChecker, CheckResult
from gradcheck import grad_check
from tensor import RunningStats, Tensor, batchnorm2d, mul, reduce_sum


class BatchNormGradientChecker(BaseChecker):
    """Training- and inference-mode batchnorm w.r.t. input, gamma and beta"""

    @property
    def name(self) -> str:
        return "BatchNorm2d Gradient"

    def check(self, rng: np.random.Generator) -> CheckResult:
        x = rng.standard_normal((4, 2, 3, 3))
        gamma = rng.uniform(0.5, 1.5, size=2)
        beta = rng.standard_normal(2)
        projection = Tensor(rng.standard_normal(x.shape))
        running = RunningStats(rng.standard_normal(2), rng.uniform(0.5, 2.0, size=2))

        errors = {
            "training": grad_check(
                lambda x, g, b: reduce_sum(mul(batchnorm2d(x, g, b, training=True), projection)),
                [x, gamma, beta],
                eps=self.eps,
            ),
            "inference": grad_check(
                lambda x, g, b: reduce_sum(
                    mul(batchnorm2d(x, g, b, training=False, running=running), projection)
                ),
                [x, gamma, beta],
                eps=self.eps,
            ),
        }
        return self.grade(errors)
