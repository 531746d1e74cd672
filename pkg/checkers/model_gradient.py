import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from base_checker import BaseChecker, CheckResult
from gradcheck import grad_check_parameters
from losses import ClassWeights, weighted_bce_multilabel, weighted_cross_entropy
from models import ConvBlock, ModelConfig, build_model, preset_config
from tensor import Tensor


class ModelGradientChecker(BaseChecker):
    """
    End-to-end loss gradient of each model family on a 2-sample batch,
    checked on a seeded sample of parameter entries.
    """

    @property
    def name(self) -> str:
        return "Model End-to-End Gradient"

    def _configs(self, seed: int):
        small = [ConvBlock(4), ConvBlock(4)]
        return {
            "binary cnn": ModelConfig(
                task="binary", input_shape=(1, 8, 8), conv_blocks=small, dense_widths=[8], seed=seed
            ),
            "multilabel cnn": ModelConfig(
                task="multilabel", input_shape=(1, 8, 8), conv_blocks=small, dense_widths=[8], seed=seed
            ),
            "resnet tiny": preset_config("resnet-tiny", "binary", (1, 8, 8), seed=seed),
        }

    def check(self, rng: np.random.Generator) -> CheckResult:
        errors = {}
        for label, config in self._configs(int(rng.integers(2**31))).items():
            model = build_model(config)
            batch = Tensor(rng.standard_normal((2,) + config.input_shape))
            if config.task == "binary":
                targets = np.array([[1.0, 0.0], [0.0, 1.0]])
                loss_fn, weights = weighted_cross_entropy, ClassWeights(np.array([1.5, 3.0]))
            else:
                targets = (rng.random((2, 14)) < 0.5).astype(np.float64)
                loss_fn, weights = weighted_bce_multilabel, ClassWeights(rng.uniform(1.0, 4.0, 14))

            errors[label] = grad_check_parameters(
                lambda: loss_fn(model.forward(batch, training=True), targets, weights),
                model.parameters(),
                eps=self.eps,
                max_checks=self.samples,
                seed=int(rng.integers(2**31)),
            )
        return self.grade(errors)
