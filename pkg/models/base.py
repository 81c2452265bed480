"""Base Controller class: anything that maps a state window to an acceleration."""

from abc import ABC, abstractmethod

import numpy as np

from config import ModelKind
from domain import SampleBatch
from errors import ValidationError


class Controller(ABC):

    name: str = "controller"
    kind: ModelKind = ModelKind.OVRV

    @property
    @abstractmethod
    def seq_len(self) -> int:
        """Number of (s, dv, v) states the controller looks at."""

    @abstractmethod
    def predict(self, windows: np.ndarray) -> np.ndarray:
        """Accelerations (N,) for state windows of shape (N, seq_len, 3)."""

    @abstractmethod
    def rdc_gradients(self, batch: SampleBatch) -> np.ndarray:
        """Exact (da/dv, da/ds, da/dr) per sample, shape (N, 3)."""

    def accel(self, window: np.ndarray) -> float:
        window = np.asarray(window, dtype=float)
        if window.shape != (self.seq_len, 3):
            raise ValidationError(f"{self.name}: expected window of shape ({self.seq_len}, 3), got {window.shape}")
        return float(self.predict(window[None, :, :])[0])

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, kind={self.kind.value})"
