from __future__ import annotations


class CfRobustError(Exception):
    """Base class for every error raised by ``cfrobust``."""


class ParameterError(CfRobustError, ValueError):
    """A parameter is outside its documented domain."""


class DegenerateBinningError(CfRobustError, ValueError):
    """A column has too few distinct values for the requested number of bins."""


class UnsupportedOmissionError(CfRobustError, ValueError):
    """Omission requested for a column that belongs to a polytope group."""


class DegenerateColumnError(CfRobustError, ValueError):
    """A categorical column collapsed to a single category."""


class IngestError(CfRobustError, ValueError):
    """A CSV file could not be loaded into a typed table."""


class SingleClassError(CfRobustError, ValueError):
    """Training data contains a single class."""


class StratificationError(CfRobustError, ValueError):
    """Too few rows to build a stratified split."""


class ZeroBaselineError(CfRobustError, ValueError):
    """Relative distance against a baseline with zero weighted norm."""

    def __init__(self, instance_id: object) -> None:
        self.instance_id = instance_id
        super().__init__(
            f"baseline counterfactual for instance {instance_id!r} has zero weighted norm"
        )


class ConfigError(CfRobustError, ValueError):
    """An experiment configuration is invalid."""


class DivergenceError(CfRobustError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float) -> None:
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")


class ExperimentError(CfRobustError, RuntimeError):
    """A stage of an experiment run failed."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
