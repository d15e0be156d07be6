"""Monte Carlo estimates with standard errors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo value.

    ``se`` is the sample standard deviation over ``sqrt(n)``. ``bias_bound`` is
    a deterministic bound on the truncation error (for example the tail of a
    discounted integral cut at a finite horizon); it is zero for plain sample
    means.
    """

    value: float | complex
    se: float
    n: int
    seed: int | None = None
    bias_bound: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("an MCEstimate needs at least two samples")
        if not self.se >= 0:
            raise ValueError("standard error must be nonnegative")

    @classmethod
    def from_samples(cls, samples, seed=None, bias_bound: float = 0.0) -> "MCEstimate":
        samples = np.asarray(samples)
        n = samples.shape[0]
        if n < 2:
            raise ValueError("an MCEstimate needs at least two samples")
        mean = samples.mean()
        if np.iscomplexobj(samples):
            var = samples.real.var(ddof=1) + samples.imag.var(ddof=1)
        else:
            var = samples.var(ddof=1)
            mean = float(mean)
        return cls(mean, math.sqrt(var / n), n, seed, bias_bound)

    def band(self, z: float = 3.0) -> float:
        """Half-width ``z * se + bias_bound``."""
        return z * self.se + self.bias_bound

    def __str__(self) -> str:
        return f"{self.value:.6g} ± {self.se:.2g} (n={self.n})"


def combined_se(*estimates: MCEstimate) -> float:
    """Standard error of a difference or sum of independent estimates."""
    return math.sqrt(sum(e.se**2 for e in estimates))


def agree(a: MCEstimate, b: MCEstimate, z: float = 3.0, slack: float = 0.0) -> bool:
    return abs(a.value - b.value) <= z * combined_se(a, b) + a.bias_bound + b.bias_bound + slack
