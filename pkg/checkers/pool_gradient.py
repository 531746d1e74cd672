import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_checker import BaseChecker, CheckResult
from gradcheck import grad_check
from tensor import Tensor, global_avg_pool2d, maxpool2d, mul, reduce_sum


class PoolGradientChecker(BaseChecker):
    @property
    def name(self) -> str:
        return "Pooling Gradient"

    def check(self, rng: np.random.Generator) -> CheckResult:
        # distinct, well-separated values keep every window's argmax stable under eps
        x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.1
        max_projection = Tensor(rng.standard_normal((2, 2, 3, 3)))
        avg_projection = Tensor(rng.standard_normal((2, 2)))

        errors = {
            "maxpool w=2": grad_check(
                lambda t: reduce_sum(mul(maxpool2d(t, 2), max_projection)), [x], eps=self.eps
            ),
            "global average": grad_check(
                lambda t: reduce_sum(mul(global_avg_pool2d(t), avg_projection)), [x], eps=self.eps
            ),
        }
        return self.grade(errors)
