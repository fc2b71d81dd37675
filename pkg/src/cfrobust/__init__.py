"""Robustness of counterfactual explanations under aleatoric and epistemic uncertainty."""

__version__ = "0.1.0"
