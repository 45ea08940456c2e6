from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class IterateTrace:
    """Iterates of a policy-iteration style solver.

    ``gains[0]`` is the initial gain and ``gains[s]`` the gain produced at
    step ``s``.  ``values[s-1]`` is the matrix computed at step ``s`` by
    evaluating ``gains[s-1]``: the value matrix ``X`` for policy iteration,
    the dual variable ``P`` for the primal-dual solvers.  ``deviations[s-1]``
    is the Frobenius norm of ``gains[s] - gains[s-1]``.
    """

    algorithm: str
    value_name: str
    gains: list[np.ndarray]
    values: list[np.ndarray] = field(default_factory=list)
    deviations: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.values)

    @property
    def final_gain(self) -> np.ndarray:
        return self.gains[-1]

    def append(self, value: np.ndarray, gain: np.ndarray) -> float:
        dev = float(np.linalg.norm(gain - self.gains[-1]))
        self.values.append(value)
        self.gains.append(gain)
        self.deviations.append(dev)
        return dev
