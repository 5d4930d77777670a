from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from src.model.pomdp_model import Belief

_SQRT5 = np.sqrt(5.0)


class KernelFamily(str, Enum):
    EXPONENTIAL = "exponential"
    SQUARED_EXPONENTIAL = "squared-exponential"
    MATERN52 = "matern-5/2"


class Kernel(BaseModel):
    """Stationary covariance over the belief simplex (Euclidean distance)."""
    model_config = ConfigDict(frozen=True)

    family: KernelFamily = KernelFamily.EXPONENTIAL
    length_scale: float = Field(default=1.0, gt=0)
    signal_variance: float = Field(default=1.0, gt=0)

    def from_distance(self, distance: np.ndarray) -> np.ndarray:
        r = np.asarray(distance, dtype=float) / self.length_scale
        if self.family == KernelFamily.EXPONENTIAL:
            shape = np.exp(-r)
        elif self.family == KernelFamily.SQUARED_EXPONENTIAL:
            shape = np.exp(-0.5 * r ** 2)
        else:
            shape = (1.0 + _SQRT5 * r + (5.0 / 3.0) * r ** 2) * np.exp(-_SQRT5 * r)
        return self.signal_variance * shape

    def gram(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of x and y."""
        return self.from_distance(cdist(np.atleast_2d(x), np.atleast_2d(y), "euclidean"))

    def with_signal_variance(self, signal_variance: float) -> "Kernel":
        return self.model_copy(update={"signal_variance": float(signal_variance)})


def kernel_eval(kernel: Kernel, b1: Belief, b2: Belief) -> float:
    """k(b1, b2)."""
    return float(kernel.gram(b1.probs, b2.probs)[0, 0])
