import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_checker import BaseChecker, CheckResult
from gradcheck import grad_check
from tensor import Tensor, affine, mul, reduce_sum


class AffineGradientChecker(BaseChecker):
    @property
    def name(self) -> str:
        return "Affine Gradient"

    def check(self, rng: np.random.Generator) -> CheckResult:
        x = rng.standard_normal((4, 7))
        w = rng.standard_normal((7, 3))
        b = rng.standard_normal(3)
        projection = Tensor(rng.standard_normal((4, 3)))

        error = grad_check(
            lambda x, w, b: reduce_sum(mul(affine(x, w, b), projection)), [x, w, b], eps=self.eps
        )
        return self.grade({"affine 4x7 -> 3": error})
