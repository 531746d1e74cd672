from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_TOLERANCE = 1e-4
DEFAULT_EPS = 1e-5
DEFAULT_SAMPLES = 20


@dataclass
class CheckResult:
    checker_name: str
    status: str  # "PASS" | "FAIL" | "WARN" | "ERROR"
    message: str
    details: Optional[str] = None


class BaseChecker(ABC):
    """
    A gradient check for one differentiable component.

    Checkers receive the flat settings dict (config.json plus CLI overrides)
    and a seeded generator for their random inputs.
    """

    def __init__(self, config=None):
        self.config = config or {}

    @property
    def tolerance(self) -> float:
        return float(self.config.get("grad_check_tolerance", DEFAULT_TOLERANCE))

    @property
    def eps(self) -> float:
        return float(self.config.get("grad_check_eps", DEFAULT_EPS))

    @property
    def samples(self) -> int:
        return int(self.config.get("grad_check_samples", DEFAULT_SAMPLES))

    @property
    @abstractmethod
    def name(self) -> str:
        """Return checker name for reporting"""
        pass

    @abstractmethod
    def check(self, rng: np.random.Generator) -> CheckResult:
        """
        Run the check
        Args:
            rng: generator for inputs and parameter sampling
        Returns:
            CheckResult with status and message
        """
        pass

    def grade(self, errors: dict) -> CheckResult:
        """PASS when every named case is within tolerance"""
        worst_case = max(errors, key=errors.get)
        worst = errors[worst_case]
        details = "\n".join(f"{case}: {err:.3e}" for case, err in errors.items())
        if worst < self.tolerance:
            return CheckResult(
                checker_name=self.name,
                status="PASS",
                message=f"max relative error {worst:.3e} below {self.tolerance:.0e} ({len(errors)} cases)",
                details=details,
            )
        return CheckResult(
            checker_name=self.name,
            status="FAIL",
            message=f"{worst_case}: relative error {worst:.3e} exceeds {self.tolerance:.0e}",
            details=details,
        )
