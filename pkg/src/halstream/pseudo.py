"""History-based pseudo-targets: historical average, moving average, persistent forecast."""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .stream import check_simplex


class Strategy(str, enum.Enum):
    DEFAULT = "default"
    HA = "ha"
    MA = "ma"
    PF = "pf"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown strategy {value!r}; expected one of "
                                  f"{[s.value for s in cls]}") from None


@dataclass(frozen=True)
class NoiseSpec:
    gamma: float = 0.0
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError(f"noise.gamma must be >= 0, got {self.gamma}")
        if self.alpha <= 0:
            raise ValidationError(f"noise.alpha must be > 0, got {self.alpha}")


class Aggregator:
    """Per-node incremental target aggregation.

    ``strategy`` is one of ``ha``, ``ma`` or ``pf``. For ``ma`` the window
    ``w > 1`` mixes the previous average and the new target as
    ``(w - 1) / w`` and ``1 / w``. Nodes never observed have no entry and
    :meth:`pseudo_target` returns ``None`` for them.
    """

    def __init__(self, strategy, n_categories: int, window: float = 5.0):
        strategy = Strategy.parse(strategy)
        if strategy is Strategy.DEFAULT:
            raise ValidationError("the default strategy has no aggregator")
        if strategy is Strategy.MA and not window > 1:
            raise ValidationError(f"moving-average window must be > 1, got {window!r}")
        self.strategy = strategy
        self.n_categories = int(n_categories)
        self.window = float(window)
        self._vec = np.zeros((0, self.n_categories))
        self._count = np.zeros(0, dtype=np.int64)

    def _grow(self, n):
        if n > len(self._count):
            cap = max(n, 2 * len(self._count))
            vec = np.zeros((cap, self.n_categories))
            vec[: len(self._vec)] = self._vec
            cnt = np.zeros(cap, dtype=np.int64)
            cnt[: len(self._count)] = self._count
            self._vec, self._count = vec, cnt

    def __len__(self):
        return int(np.count_nonzero(self._count))

    def __contains__(self, node):
        node = int(node)
        return 0 <= node < len(self._count) and self._count[node] > 0

    def observe(self, node, target) -> None:
        target = check_simplex(target)
        if target.shape != (self.n_categories,):
            raise ValidationError(f"target has length {target.size}, expected {self.n_categories}")
        node = int(node)
        self._grow(node + 1)
        first = self._count[node] == 0
        self._count[node] += 1
        if self.strategy is Strategy.HA:
            self._vec[node] += target
        elif self.strategy is Strategy.MA and not first:
            w = self.window
            self._vec[node] = ((w - 1.0) / w) * self._vec[node] + (1.0 / w) * target
        else:
            self._vec[node] = target

    def observe_many(self, nodes, targets, timestamps=None) -> None:
        """Feed several targets in ``(timestamp, node)`` order."""
        nodes = np.asarray(nodes)
        if timestamps is None:
            order = np.argsort(nodes, kind="stable")
        else:
            order = np.lexsort((nodes, np.asarray(timestamps)))
        for i in order:
            self.observe(nodes[i], targets[i])

    def pseudo_target(self, node):
        """Aggregated target for ``node``, or ``None`` when it has no history."""
        if node not in self:
            return None
        node = int(node)
        if self.strategy is Strategy.HA:
            return self._vec[node] / self._count[node]
        return self._vec[node].copy()

    def pseudo_targets(self, nodes):
        """Vectorized :meth:`pseudo_target`: ``(available_nodes, targets)``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        nodes = nodes[(nodes >= 0) & (nodes < len(self._count))]
        nodes = nodes[self._count[nodes] > 0]
        vec = self._vec[nodes]
        if self.strategy is Strategy.HA:
            vec = vec / self._count[nodes][:, None]
        return nodes, vec

    def count(self, node) -> int:
        """Number of targets observed for ``node`` so far."""
        node = int(node)
        return int(self._count[node]) if 0 <= node < len(self._count) else 0

    def snapshot(self) -> "Aggregator":
        return copy.deepcopy(self)


def add_zero_sum_noise(ybar, gamma: float, alpha: float = 1.0, rng=None):
    """Perturb ``ybar`` with mean-centred uniform noise, then re-project to the simplex.

    ``gamma == 0`` returns ``ybar`` untouched without consuming randomness.
    Negative components left by the noise are clipped to zero and the vector
    is renormalized.
    """
    ybar = np.asarray(ybar, dtype=np.float64)
    if gamma == 0:
        return ybar
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    eps = rng.uniform(-alpha, alpha, size=ybar.shape)
    eps -= eps.mean()
    y = np.clip(ybar + gamma * eps, 0.0, None)
    return y / y.sum()
