from __future__ import annotations

from dataclasses import dataclass

from cfrobust.errors import ParameterError


@dataclass(frozen=True)
class CESearchConfig:
    """Settings shared by every counterfactual generator.

    ``epsilon_margin`` is the score margin the linear searches require past the decision
    boundary; ``budget`` caps classifier evaluations of the sampling searches.
    """
    epsilon_margin: float = 1e-6
    budget: int = 2000
    seed: int = 0
    target_class: int = 1
    enumeration_limit: int = 4096
    node_limit: int = 200_000

    def __post_init__(self) -> None:
        if not self.epsilon_margin > 0:
            raise ParameterError(f"epsilon_margin must be positive, got {self.epsilon_margin}")
        if self.budget < 1:
            raise ParameterError(f"budget must be at least 1, got {self.budget}")
        if self.target_class not in (0, 1):
            raise ParameterError(f"target_class must be 0 or 1, got {self.target_class}")
        if self.enumeration_limit < 1 or self.node_limit < 1:
            raise ParameterError("enumeration_limit and node_limit must be positive")

    @property
    def sign(self) -> float:
        """+1 when the target is class 1, -1 when it is class 0."""
        return 1.0 if self.target_class == 1 else -1.0
