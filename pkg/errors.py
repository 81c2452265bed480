"""Exception hierarchy shared by every module."""

from typing import Optional


class CarFollowingError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CarFollowingError, ValueError):
    """Invalid input data, arguments or configuration."""


class AutodiffError(CarFollowingError):
    """Tape misuse or a primitive evaluated outside its domain."""


class DegenerateCalibrationError(CarFollowingError):
    """Calibration data cannot identify the physics parameters."""

    def __init__(self, message: str, objective: float):
        super().__init__(f"{message} (flat objective = {objective:.6g})")
        self.objective = objective


class TrainingDivergedError(CarFollowingError):
    """Loss became NaN or infinite during training."""

    def __init__(self, message: str, epoch: int, loss: Optional[float] = None):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
        self.loss = loss


class SimulationError(CarFollowingError):
    """Closed-loop simulation could not proceed."""
