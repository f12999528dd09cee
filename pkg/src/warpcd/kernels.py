"""Generalized trigonometric functions and distortion coefficients.

``sn`` and ``cn`` solve ``u'' + K u = 0`` with ``sn(0) = 0, sn'(0) = 1`` and
``cn(0) = 1, cn'(0) = 0``.  The distortion coefficients ``sigma`` and ``tau``
are the model-space weights of the curvature-dimension inequality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this value of |K| t^2 the trigonometric forms lose digits to
# cancellation, so a short Taylor series is used instead.
SERIES_SWITCH = 1e-8


@dataclass(frozen=True)
class CurvatureDimParams:
    """Arguments of a distortion coefficient evaluation."""

    K: float
    N: float
    t: float
    theta: float

    def __post_init__(self):
        if not self.N >= 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {self.t}")
        if not self.theta >= 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")

    @property
    def is_infinite(self) -> bool:
        return critical_infinite(self.K, self.N, self.theta)

    def tau(self) -> float:
        return tau(self.K, self.N, self.t, self.theta)


def _sn_scalar(K: float, t: float) -> float:
    x = K * t * t
    if abs(x) < SERIES_SWITCH:
        return t * (1.0 - x / 6.0 + x * x / 120.0)
    if K > 0:
        rk = math.sqrt(K)
        return math.sin(rk * t) / rk
    rk = math.sqrt(-K)
    return math.sinh(rk * t) / rk


def _cn_scalar(K: float, t: float) -> float:
    x = K * t * t
    if abs(x) < SERIES_SWITCH:
        return 1.0 - x / 2.0 + x * x / 24.0
    if K > 0:
        return math.cos(math.sqrt(K) * t)
    return math.cosh(math.sqrt(-K) * t)


def sn(K, t):
    """``sin(sqrt(K) t)/sqrt(K)``, ``t`` or ``sinh(sqrt(-K) t)/sqrt(-K)``.

    Accepts scalars or arrays for ``t``.
    """
    if np.ndim(t) == 0:
        return _sn_scalar(float(K), float(t))
    t = np.asarray(t, dtype=float)
    x = K * t * t
    out = t * (1.0 - x / 6.0 + x * x / 120.0)
    big = np.abs(x) >= SERIES_SWITCH
    if K > 0:
        rk = math.sqrt(K)
        out[big] = np.sin(rk * t[big]) / rk
    elif K < 0:
        rk = math.sqrt(-K)
        out[big] = np.sinh(rk * t[big]) / rk
    return out


def cn(K, t):
    """Companion of :func:`sn`, the derivative of ``sn`` in ``t``."""
    if np.ndim(t) == 0:
        return _cn_scalar(float(K), float(t))
    t = np.asarray(t, dtype=float)
    x = K * t * t
    out = 1.0 - x / 2.0 + x * x / 24.0
    big = np.abs(x) >= SERIES_SWITCH
    if K > 0:
        out[big] = np.cos(math.sqrt(K) * t[big])
    elif K < 0:
        out[big] = np.cosh(math.sqrt(-K) * t[big])
    return out


def critical_length(K: float, Nminus1: float) -> float:
    """Length ``pi*sqrt(Nminus1/K)`` beyond which sigma blows up (inf if K <= 0)."""
    if K <= 0:
        return math.inf
    return math.pi * math.sqrt(Nminus1 / K)


def critical_infinite(K: float, N: float, theta: float) -> bool:
    """True exactly when ``tau(K, N, ., theta)`` is infinite."""
    return K > 0 and N > 1 and theta >= critical_length(K, N - 1)


def sigma(K: float, Nminus1: float, t: float, theta: float) -> float:
    """Distortion coefficient ``sn(K/(N-1), t*theta) / sn(K/(N-1), theta)``.

    Returns ``t`` for ``K = 0`` or ``theta = 0`` and ``inf`` past the critical
    length when ``K > 0``.
    """
    if Nminus1 <= 0:
        raise ValueError("sigma needs Nminus1 > 0; tau handles N = 1 directly")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    if K > 0 and theta >= critical_length(K, Nminus1):
        return math.inf
    if K == 0 or theta == 0:
        return float(t)
    if t == 1.0:
        return 1.0
    kappa = K / Nminus1
    return _sn_scalar(kappa, t * theta) / _sn_scalar(kappa, theta)


def tau(K: float, N: float, t: float, theta: float) -> float:
    """Distortion coefficient ``t**(1/N) * sigma(K, N-1, t, theta)**(1 - 1/N)``."""
    if not N >= 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if N == 1:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        return float(t)
    s = sigma(K, N - 1, t, theta)
    if math.isinf(s):
        return math.inf
    if s == t:
        # t**(1/N) * t**(1-1/N) would round away from t
        return float(t)
    return t ** (1.0 / N) * s ** (1.0 - 1.0 / N)


def tau_array(K: float, N: float, t: float, theta) -> np.ndarray:
    """Vectorized :func:`tau` over an array of lengths."""
    theta = np.asarray(theta, dtype=float)
    return np.array([tau(K, N, t, float(x)) for x in theta.ravel()]).reshape(theta.shape)
