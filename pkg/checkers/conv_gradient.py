import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_checker import BaseChecker, CheckResult
from gradcheck import grad_check
from tensor import ConvSpec, Tensor, conv2d, mul, reduce_sum


class ConvGradientChecker(BaseChecker):
    """
    conv2d gradients w.r.t. input, kernels and bias, for a plain
    stride-1 same-padding layer and a strided padded one.
    """

    @property
    def name(self) -> str:
        return "Conv2d Gradient"

    def check(self, rng: np.random.Generator) -> CheckResult:
        cases = {
            "k3 s1 p1": (ConvSpec(3, 3, 1, 1), (2, 2, 5, 5)),
            "k3 s2 p1": (ConvSpec(4, 3, 2, 1), (2, 3, 6, 6)),
        }
        errors = {}
        for label, (spec, shape) in cases.items():
            x = rng.standard_normal(shape)
            w = rng.standard_normal((spec.filter_count, shape[1], spec.kernel_size, spec.kernel_size))
            b = rng.standard_normal(spec.filter_count)
            out_shape = (shape[0], spec.filter_count, spec.output_extent(shape[2]), spec.output_extent(shape[3]))
            projection = Tensor(rng.standard_normal(out_shape))

            def builder(x, w, b, spec=spec, projection=projection):
                return reduce_sum(mul(conv2d(x, w, b, spec), projection))

            errors[label] = grad_check(builder, [x, w, b], eps=self.eps)
        return self.grade(errors)
