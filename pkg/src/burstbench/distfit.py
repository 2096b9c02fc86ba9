"""Statistical workload model: Gamma inter-arrival gaps, truncated Zipf
lengths, and the time-varying schedule that drives both.

Gamma parameters use the shape/scale convention throughout: a gap drawn from
``GammaParams(alpha, beta)`` has mean ``alpha * beta`` and coefficient of
variation ``1 / sqrt(alpha)``. The Gamma model describes inter-arrival
times, not per-window counts.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .trace import _timestamps


@dataclass(frozen=True)
class GammaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be > 0, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha * self.beta

    @property
    def cv(self) -> float:
        return cv(self.alpha)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.alpha, self.beta, size=size)


@lru_cache(maxsize=256)
def _zipf_cdf(theta: float, l_max: int) -> np.ndarray:
    k = np.arange(1, l_max + 1, dtype=float)
    # log-space keeps large theta from underflowing to an all-zero pmf
    logw = -theta * np.log(k)
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    cdf.setflags(write=False)
    return cdf


@dataclass(frozen=True)
class ZipfParams:
    """Truncated Zipf law, P(k) proportional to k**-theta on 1..l_max."""

    theta: float
    l_max: int = 2048

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.l_max < 1:
            raise ValueError(f"l_max must be >= 1, got {self.l_max}")

    def pmf(self) -> np.ndarray:
        return np.diff(self.cdf(), prepend=0.0)

    def cdf(self) -> np.ndarray:
        return _zipf_cdf(float(self.theta), int(self.l_max))

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.l_max + 1), self.pmf()))

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        k = np.searchsorted(self.cdf(), u, side="right") + 1
        k = np.minimum(k, self.l_max)
        return int(k) if size is None else k.astype(np.int64)


def cv(alpha: float) -> float:
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    return 1.0 / math.sqrt(alpha)


def fit_gamma(samples) -> GammaParams:
    """Method-of-moments Gamma fit: alpha = mean²/var, beta = var/mean."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    if np.any(x <= 0):
        raise ValueError("all samples must be > 0")
    mean = x.mean()
    var = x.var()
    if var <= 0:
        raise ValueError("degenerate sample: zero variance")
    return GammaParams(alpha=float(mean * mean / var), beta=float(var / mean))


def zipf_loglik(theta: float, lengths, l_max: int) -> float:
    k = np.asarray(lengths, dtype=float)
    log_norm = np.logaddexp.reduce(-theta * np.log(np.arange(1, l_max + 1)))
    return float(-theta * np.log(k).sum() - k.size * log_norm)


def fit_zipf(lengths, l_max: int, theta_min: float = 1e-6, theta_max: float = 50.0) -> ZipfParams:
    """Maximum-likelihood exponent of a truncated Zipf law on ``1..l_max``.

    The score ``E_theta[log k] - mean(log k_i)`` is strictly decreasing in
    theta, so the root is bracketed and found by Brent's method. A sample
    lighter-tailed than anything in the bracket clamps to ``theta_max``
    (e.g. all ones); a sample at least as heavy as uniform clamps to
    ``theta_min``.
    """
    k = np.asarray(lengths)
    if k.size == 0:
        raise ValueError("no samples")
    if np.any(k < 1) or np.any(k > l_max):
        raise ValueError(f"all lengths must lie in [1, {l_max}]")
    counts = np.bincount(k.astype(np.int64), minlength=l_max + 1)[1:]
    logk = np.log(np.arange(1, l_max + 1, dtype=float))
    target = float(np.dot(counts, logk) / k.size)

    def score(theta):
        logw = -theta * logk
        w = np.exp(logw - logw.max())
        return float(np.dot(w, logk) / w.sum()) - target

    if score(theta_max) >= 0:
        return ZipfParams(theta_max, l_max)
    if score(theta_min) <= 0:
        return ZipfParams(theta_min, l_max)
    theta = brentq(score, theta_min, theta_max, xtol=1e-10, rtol=1e-12)
    return ZipfParams(float(theta), l_max)


@dataclass(frozen=True)
class ParameterSchedule:
    """Time-varying (alpha, beta, theta).

    alpha follows ``a2*t² + a1*t + a0``, beta ``b1*t + b0`` and theta
    ``c1*t + c0``, where t is elapsed seconds at the start of the enclosing
    update interval. Each value is clamped below by its minimum.
    """

    alpha: tuple[float, float, float] = (0.0, 0.0, 1.0)
    beta: tuple[float, float] = (0.0, 1.0)
    theta: tuple[float, float] = (0.0, 1.1)
    alpha_min: float = 1e-3
    beta_min: float = 1e-6
    theta_min: float = 1e-3
    update_interval: float = 1200.0
    l_max: int = 2048

    def __post_init__(self):
        # normalise so equal schedules serialize (and hash) identically
        for name in ("alpha", "beta", "theta"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("alpha_min", "beta_min", "theta_min", "update_interval"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "l_max", int(self.l_max))
        if len(self.alpha) != 3 or len(self.beta) != 2 or len(self.theta) != 2:
            raise ValueError("alpha takes 3 coefficients, beta and theta take 2")
        if not self.update_interval > 0:
            raise ValueError("update_interval must be > 0")
        if min(self.alpha_min, self.beta_min, self.theta_min) <= 0:
            raise ValueError("clamp minima must be > 0")

    @classmethod
    def constant(cls, alpha: float, beta: float, theta: float = 1.1, **kw) -> "ParameterSchedule":
        return cls(alpha=(0.0, 0.0, alpha), beta=(0.0, beta), theta=(0.0, theta), **kw)

    def at(self, elapsed: float) -> tuple[float, float, float]:
        """Raw clamped polynomial values at ``elapsed``, no interval quantization."""
        a2, a1, a0 = self.alpha
        b1, b0 = self.beta
        c1, c0 = self.theta
        t = elapsed
        return (
            max(a2 * t * t + a1 * t + a0, self.alpha_min),
            max(b1 * t + b0, self.beta_min),
            max(c1 * t + c0, self.theta_min),
        )

    def scale_beta(self, m: float) -> "ParameterSchedule":
        b1, b0 = self.beta
        return _replace(self, beta=(b1 * m, b0 * m))

    def to_config(self) -> dict:
        a2, a1, a0 = self.alpha
        b1, b0 = self.beta
        c1, c0 = self.theta
        return {
            "update_interval_s": self.update_interval,
            "alpha": {"a2": a2, "a1": a1, "a0": a0, "min": self.alpha_min},
            "beta": {"b1": b1, "b0": b0, "min": self.beta_min},
            "theta": {"c1": c1, "c0": c0, "min": self.theta_min},
            "l_max": self.l_max,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ParameterSchedule":
        known = {"update_interval_s", "alpha", "beta", "theta", "l_max"}
        extra = set(cfg) - known
        if extra:
            raise ValueError(f"unknown schedule keys: {sorted(extra)}")
        a = cfg.get("alpha", {})
        b = cfg.get("beta", {})
        c = cfg.get("theta", {})
        default = cls()
        return cls(
            alpha=(float(a.get("a2", 0.0)), float(a.get("a1", 0.0)), float(a.get("a0", default.alpha[2]))),
            beta=(float(b.get("b1", 0.0)), float(b.get("b0", default.beta[1]))),
            theta=(float(c.get("c1", 0.0)), float(c.get("c0", default.theta[1]))),
            alpha_min=float(a.get("min", default.alpha_min)),
            beta_min=float(b.get("min", default.beta_min)),
            theta_min=float(c.get("min", default.theta_min)),
            update_interval=float(cfg.get("update_interval_s", default.update_interval)),
            l_max=int(cfg.get("l_max", default.l_max)),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_config(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _replace(schedule: ParameterSchedule, **changes) -> ParameterSchedule:
    d = asdict(schedule)
    d.update(changes)
    return ParameterSchedule(**d)


def interval_start(schedule: ParameterSchedule, t: float) -> float:
    return math.floor(t / schedule.update_interval) * schedule.update_interval


def eval_schedule(schedule: ParameterSchedule, t: float) -> tuple[float, float, float]:
    """(alpha, beta, theta) in force at elapsed time ``t``.

    Piecewise constant: the polynomials are evaluated at the start of the
    update interval containing ``t``.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return schedule.at(interval_start(schedule, t))


@dataclass
class WindowFits:
    fits: list[tuple[int, GammaParams]] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)


def window_fit(records, window_length: float, origin: float = 0.0, min_arrivals: int = 3) -> WindowFits:
    """Fit a Gamma law to the inter-arrival gaps inside each window.

    Windows with fewer than ``min_arrivals`` arrivals, or whose gaps cannot
    be fitted (zero gaps, zero variance), are listed in ``skipped``.
    """
    if not window_length > 0:
        raise ValueError(f"window_length must be > 0, got {window_length}")
    ts = _timestamps(records)
    out = WindowFits()
    if ts.size == 0:
        return out
    idx = np.floor((ts - origin) / window_length).astype(np.int64)
    n_windows = int(idx.max()) + 1
    bounds = np.searchsorted(idx, np.arange(n_windows + 1))
    for w in range(n_windows):
        chunk = ts[bounds[w]:bounds[w + 1]]
        if chunk.size < min_arrivals:
            out.skipped.append((w, f"{chunk.size} arrivals < {min_arrivals}"))
            continue
        try:
            out.fits.append((w, fit_gamma(np.diff(chunk))))
        except ValueError as exc:
            out.skipped.append((w, str(exc)))
    return out
