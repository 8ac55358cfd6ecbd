"""Label-variance formulas, regret-bound coefficients and their Monte Carlo checks.

The label statistic ``t_h`` is one true-set component of a history-averaged
target: ``t_h = xi * X / h`` with ``xi ~ Bernoulli(u)`` and
``X ~ Binomial(h, 1/k)`` independent. ``h = 1`` is the plain one-hot label.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import forward, grad_last_layer

REGRET_CONSTANT = 17.0
MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class LabelProcessParams:
    k: int
    n: int
    h: int = 1
    u: float = 1.0

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValidationError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.h < 1:
            raise ValidationError(f"history length h must be >= 1, got {self.h}")
        if not 0 < self.u <= 1:
            raise ValidationError(f"u must be in (0, 1], got {self.u}")


@dataclass(frozen=True)
class RegretParams:
    mu: float
    B: int
    T: int
    c: float = 1.0

    def __post_init__(self):
        if self.mu <= 0 or self.B < 1 or self.c <= 0:
            raise ValidationError("mu, B and c must be positive")
        if self.T < 2:
            raise ValidationError(f"horizon T must be >= 2, got {self.T}")


def analytic_mean_t_h(params: LabelProcessParams) -> float:
    return params.u / params.k


def analytic_var_t_h(params: LabelProcessParams) -> float:
    k, h, u = params.k, params.h, params.u
    return u * (k - 1) / (k * k * h) + u * (1 - u) / (k * k)


def one_hot_variance(k: int, u: float) -> float:
    """Variance of a single one-hot label component, ``(u/k)(1 - u/k)``."""
    q = u / k
    return q * (1 - q)


def variance_ratio(k: int, h: int, u: float, n: int | None = None) -> float:
    """``var(t_1) / var(t_h)``: the predicted one-hot to history-average variance ratio."""
    n = k if n is None else n
    v1 = analytic_var_t_h(LabelProcessParams(k, n, 1, u))
    vh = analytic_var_t_h(LabelProcessParams(k, n, h, u))
    if vh == 0:
        return 1.0 if v1 == 0 else math.inf
    return v1 / vh


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Moments:
    """Count, mean and central moment sums ``M2..M4`` of a sample."""

    n: int
    mean: float
    m2: float
    m3: float
    m4: float

    @classmethod
    def of(cls, x) -> "Moments":
        x = np.asarray(x, dtype=np.float64)
        mu = float(x.mean())
        d = x - mu
        d2 = d * d
        return cls(len(x), mu, float(d2.sum()), float((d2 * d).sum()), float((d2 * d2).sum()))

    def merge(self, o: "Moments") -> "Moments":
        # pairwise update for central moments (Pebay 2008)
        if self.n == 0:
            return o
        if o.n == 0:
            return self
        na, nb = self.n, o.n
        n = na + nb
        delta = o.mean - self.mean
        d_n = delta / n
        mean = self.mean + nb * d_n
        m2 = self.m2 + o.m2 + delta * d_n * na * nb
        m3 = (self.m3 + o.m3 + delta * d_n * d_n * na * nb * (na - nb)
              + 3.0 * d_n * (na * o.m2 - nb * self.m2))
        m4 = (self.m4 + o.m4 + delta * d_n ** 3 * na * nb * (na * na - na * nb + nb * nb)
              + 6.0 * d_n * d_n * (na * na * o.m2 + nb * nb * self.m2)
              + 4.0 * d_n * (na * o.m3 - nb * self.m3))
        return Moments(n, mean, m2, m3, m4)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    variance: float
    mean_se: float
    var_se: float
    samples: int


def moments_to_estimate(mo: Moments) -> MCEstimate:
    m = mo.n
    var = mo.m2 / (m - 1)
    mean_se = math.sqrt(var / m)
    mu4 = mo.m4 / m
    sigma2 = mo.m2 / m
    var_of_var = (mu4 - (m - 3) / (m - 1) * sigma2 * sigma2) / m
    return MCEstimate(mo.mean, var, mean_se, math.sqrt(max(var_of_var, 0.0)), m)


def sample_t_h(params: LabelProcessParams, size: int, rng) -> np.ndarray:
    xi = rng.random(size) < params.u
    x = rng.binomial(params.h, 1.0 / params.k, size=size)
    return xi * (x / params.h)


def _chunk_moments(params, size, seed, index):
    rng = np.random.default_rng([seed, index])
    return Moments.of(sample_t_h(params, size, rng))


def mc_estimate_t_h(params: LabelProcessParams, samples: int = 10**6, seed: int = 0,
                    workers: int = 1) -> MCEstimate:
    """Sample mean and unbiased variance of ``t_h`` with standard errors.

    Samples are drawn in fixed-size chunks with per-chunk seeds and merged in
    chunk order, so the result does not depend on ``workers``.
    """
    if samples < 1000:
        raise ValidationError(f"need at least 1000 samples, got {samples}")
    sizes = [MC_CHUNK] * (samples // MC_CHUNK)
    if samples % MC_CHUNK:
        sizes.append(samples % MC_CHUNK)
    jobs = [(params, s, seed, i) for i, s in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda a: _chunk_moments(*a), jobs))
    else:
        parts = [_chunk_moments(*a) for a in jobs]
    total = parts[0]
    for p in parts[1:]:
        total = total.merge(p)
    return moments_to_estimate(total)


# ---------------------------------------------------------------------------
# Regret bounds
# ---------------------------------------------------------------------------

def regret_bound_theorem1(sigma2: float, rp: RegretParams) -> float:
    """``17 sigma^2 (1 + ln T) / (mu B T)``."""
    if sigma2 < 0:
        raise ValidationError("sigma2 must be non-negative")
    return REGRET_CONSTANT * sigma2 * (1.0 + math.log(rp.T)) / (rp.mu * rp.B * rp.T)


@dataclass(frozen=True)
class RegretCoefficients:
    oh_coeff: float
    ha_coeff: float
    informal_oh: float
    informal_ha: float
    speedup: float

    def bound(self, which: str, params: LabelProcessParams, rp: RegretParams) -> float:
        """Full regret bound ``coeff * (u/k) * c/(mu B) * (1 + ln T)/T``."""
        coeff = getattr(self, f"{which}_coeff" if which in ("oh", "ha") else which)
        return coeff * params.u / params.k * rp.c / (rp.mu * rp.B) * (1 + math.log(rp.T)) / rp.T


def regret_coeffs_theorem2(params: LabelProcessParams) -> RegretCoefficients:
    """Exact and informal one-hot / history-average regret coefficients."""
    k, h, u = params.k, params.h, params.u
    oh = 1.0 - u / k
    ha = (k - 1) / (k * h) + (1 - u) / k
    informal_ha = 2.0 / min(h, k)
    if oh > 1.0 or ha > informal_ha + 1e-15:
        raise AssertionError(f"informal bounds violated for {params}")
    speedup = oh / ha if ha > 0 else (1.0 if oh == 0 else math.inf)
    return RegretCoefficients(oh, ha, 1.0, informal_ha, speedup)


# ---------------------------------------------------------------------------
# Gradient variance
# ---------------------------------------------------------------------------

def sample_labels(params: LabelProcessParams, presentation: str, size: int, rng) -> np.ndarray:
    """Label vectors over ``n`` categories; the true set is ``0..k-1``.

    ``oh``: ``xi`` times a one-hot on a uniform true category. ``ha``: ``xi``
    times ``Multinomial(h, 1/k) / h`` on the true set.
    """
    k, n = params.k, params.n
    xi = rng.random(size) < params.u
    y = np.zeros((size, n))
    if presentation == "oh":
        y[np.arange(size), rng.integers(0, k, size=size)] = 1.0
    elif presentation == "ha":
        y[:, :k] = rng.multinomial(params.h, np.full(k, 1.0 / k), size=size) / params.h
    else:
        raise ValidationError(f"presentation must be 'oh' or 'ha', got {presentation!r}")
    return y * xi[:, None]


def empirical_gradient_variance(C, e, params: LabelProcessParams, presentation: str,
                                samples: int = 10**5, seed: int = 0, chunk: int = 4096) -> float:
    """Trace of the covariance of the last-layer gradient under random labels.

    ``(C, e)`` stay fixed; each sample draws a label, evaluates
    :func:`grad_last_layer` and the mean squared Frobenius deviation from the
    mean gradient is returned.
    """
    C = np.asarray(C, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if C.shape[0] != params.n:
        raise ValidationError(f"C has {C.shape[0]} rows, expected n={params.n}")
    p = forward(C, e)
    rng = np.random.default_rng(seed)
    s1 = np.zeros(C.shape)
    s2 = np.zeros(C.shape)
    # shift by the noiseless gradient to keep the sums well conditioned
    ref = grad_last_layer(p, params.u / params.k * (np.arange(params.n) < params.k), e)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        y = sample_labels(params, presentation, m, rng)
        g = grad_last_layer(np.broadcast_to(p, y.shape), y, np.broadcast_to(e, (m, e.size))) - ref
        s1 += g.sum(axis=0)
        s2 += (g * g).sum(axis=0)
        done += m
    mean = s1 / samples
    return float((s2 / samples - mean * mean).sum())
