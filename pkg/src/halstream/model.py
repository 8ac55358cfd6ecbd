"""Node memory, softmax-linear affinity head, cross-entropy and SGD.

Only the last layer ``C`` is trained. Node embeddings come from a fixed,
parameter-free memory so that every gradient is available in closed form.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ChronologyError, NonFiniteGradientError, ValidationError

LOG_EPS = 1e-12


@numba.njit(cache=True)
def _apply_edges(emb, src, slots, proj, lam):
    d = emb.shape[1]
    w = 1.0 - lam
    has_proj = proj.shape[1] > 0
    z = np.empty(d - 1)
    for i in range(src.shape[0]):
        u = src[i]
        for j in range(d - 1):
            z[j] = lam * emb[u, j + 1]
        z[slots[i] - 1] += w
        if has_proj:
            for j in range(d - 1):
                z[j] += proj[i, j]
        nrm = 0.0
        for j in range(d - 1):
            nrm += z[j] * z[j]
        nrm = np.sqrt(nrm)
        for j in range(d - 1):
            emb[u, j + 1] = z[j] / nrm if nrm > 0 else 0.0


class NodeMemory:
    """Decay-and-project memory for source nodes.

    Component 0 of every embedding is a bias fixed at 1. For an edge
    ``(u, v, t, f)`` the remaining components of ``e_u`` become
    ``decay * e_u + (1 - decay) * x`` renormalized to unit length, where
    ``x`` is a one-hot slot for ``v`` (slot ``1 + v % (dim - 1)``) plus the
    projected edge features. Destination memories are not touched.
    """

    def __init__(self, n_nodes: int, dim: int = 32, decay: float = 0.9, edge_dim: int = 0, seed: int = 0):
        if dim < 2:
            raise ValidationError(f"memory dimension must be >= 2, got {dim}")
        if not 0 <= decay <= 1:
            raise ValidationError(f"memory decay must be in [0, 1], got {decay}")
        self.dim = int(dim)
        self.decay = float(decay)
        self.edge_dim = int(edge_dim)
        rng = np.random.default_rng(seed)
        if self.edge_dim:
            self.projection = rng.standard_normal((self.dim, self.edge_dim)) / math.sqrt(self.edge_dim)
        else:
            self.projection = np.zeros((self.dim, 0))
        self.emb = np.zeros((max(int(n_nodes), 1), self.dim))
        self.emb[:, 0] = 1.0
        self.last_t = np.full(len(self.emb), -np.inf)
        self.time = -np.inf

    def _grow(self, n):
        if n <= len(self.emb):
            return
        extra = np.zeros((n - len(self.emb), self.dim))
        extra[:, 0] = 1.0
        self.emb = np.vstack([self.emb, extra])
        self.last_t = np.concatenate([self.last_t, np.full(len(extra), -np.inf)])

    def embedding(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        if nodes.size:
            self._grow(int(nodes.max()) + 1)
        return self.emb[nodes].copy()

    def update(self, src, dst, t, features=None) -> None:
        """Apply edges in order. Raises ``ChronologyError`` on a time reversal."""
        src = np.asarray(src, dtype=np.int64)
        n_e = len(src)
        if n_e == 0:
            return
        t = np.asarray(t, dtype=np.float64)
        if t[0] < self.time or np.any(np.diff(t) < 0):
            raise ChronologyError(f"edge at t={t[0]!r} precedes memory time {self.time!r}")
        self._grow(int(max(src.max(), np.max(dst))) + 1)
        self.time = float(t[-1])
        np.maximum.at(self.last_t, src, t)
        lam = self.decay
        if lam == 1.0:
            return
        slots = 1 + np.asarray(dst, dtype=np.int64) % (self.dim - 1)
        if self.edge_dim and features is not None and np.size(features):
            proj = (1.0 - lam) * (np.asarray(features, dtype=np.float64) @ self.projection.T)[:, 1:]
        else:
            proj = np.zeros((n_e, 0))
        _apply_edges(self.emb, src, slots, np.ascontiguousarray(proj), lam)

    def snapshot(self) -> "NodeMemory":
        return copy.deepcopy(self)


def memory_update(memory: NodeMemory, batch) -> NodeMemory:
    """Apply a batch's edges to ``memory`` in place and return it."""
    memory.update(batch.src, batch.dst, batch.t, batch.features)
    return memory


def init_params(n_categories: int, dim: int, seed: int = 0) -> np.ndarray:
    """Last-layer weights ``C`` of shape ``(n_categories, dim)``, std ``1/sqrt(dim)``."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_categories, dim)) / math.sqrt(dim)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def forward(C, e) -> np.ndarray:
    """``softmax(C @ e)``; ``e`` may be one embedding or a stack of them."""
    C = np.asarray(C, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if C.ndim != 2 or e.shape[-1] != C.shape[1]:
        raise ValidationError(f"dimension mismatch: C {C.shape} vs embedding {e.shape}")
    return softmax(e @ C.T)


def ce_loss(p, y) -> np.ndarray | float:
    """Cross-entropy ``-sum(y * log(p + 1e-12))`` along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(p + LOG_EPS)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def grad_last_layer(p, y, e) -> np.ndarray:
    """Gradient of the cross-entropy w.r.t. ``C``: ``G[i, j] = (p_i - y_i) e_j``.

    With stacked inputs of shape ``(B, n)`` and ``(B, d)`` returns ``(B, n, d)``.
    """
    r = np.asarray(p, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    return r[..., :, None] * e[..., None, :]


def mean_grad(p, y, e) -> np.ndarray:
    """Average of :func:`grad_last_layer` over a batch, without materializing it."""
    r = np.asarray(p) - np.asarray(y)
    return r.T @ np.asarray(e) / len(r)


def step_size(t: int, mu: float, alpha_min: float) -> float:
    return max(1.0 / (mu * t), alpha_min)


def sgd_step(C, grad, t: int, mu: float, alpha_min: float = 1e-6) -> np.ndarray:
    """One SGD update with the ``1/(mu t)`` schedule floored at ``alpha_min``."""
    if t < 1:
        raise ValidationError(f"SGD step counter must be >= 1, got {t}")
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(t, float(np.linalg.norm(np.nan_to_num(grad, nan=np.inf))))
    return np.asarray(C) - step_size(t, mu, alpha_min) * grad


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 32
    mem_decay: float = 0.9
    mu: float = 0.2
    alpha_min: float = 1e-6
    max_epochs: int = 30
    patience: int = 3
    batch_edges: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValidationError(f"train.mu must be > 0, got {self.mu}")
        if self.alpha_min <= 0:
            raise ValidationError(f"train.alpha_min must be > 0, got {self.alpha_min}")
        if self.patience < 1:
            raise ValidationError(f"train.patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValidationError(f"train.max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_edges < 1:
            raise ValidationError(f"train.batch_edges must be >= 1, got {self.batch_edges}")
        if self.dim < 2:
            raise ValidationError(f"model.dim must be >= 2, got {self.dim}")
        if not 0 <= self.mem_decay < 1:
            raise ValidationError(f"model.mem_decay must be in [0, 1), got {self.mem_decay}")
