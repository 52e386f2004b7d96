"""Exception taxonomy shared by every rodd module.

CLI exit-code mapping: ContractViolation and FormatError are user/input
errors (exit 1); NumericFailure and its subclasses are numeric errors
(exit 2).
"""


class RoddError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(RoddError):
    """An argument violates a documented precondition."""


class FormatError(RoddError):
    """A file or config text is malformed; the message carries the position."""


class NumericFailure(RoddError):
    """An iterative routine failed to converge or produced unusable numbers."""


class DegenerateFeatureError(NumericFailure):
    """A feature vector has (near-)zero norm, so its angle is undefined."""

    def __init__(self, sample_index: int, norm: float):
        self.sample_index = int(sample_index)
        self.norm = float(norm)
        super().__init__(
            f"feature vector {self.sample_index} has norm {self.norm:.3e} "
            "(below 1e-12); cannot normalize"
        )


class DivergenceError(NumericFailure):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = "non-finite loss"):
        self.epoch = int(epoch)
        super().__init__(f"{message} at epoch {self.epoch}")
