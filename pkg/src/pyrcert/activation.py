"""Gaussian-smoothed leaky-ReLU activations.

The family is parameterized by a slope floor ``gamma`` in (0, 1) and a
smoothing scale ``beta`` > 0.  It is the piecewise-linear ramp
``max(gamma*x, x)`` convolved with a narrow Gaussian and shifted so that the
value at 0 is exactly 0.  The closed form goes through the standard normal
CDF, so everything here reduces to ``erfc`` and ``exp`` calls.

Key analytic facts used throughout the package (and asserted by the tests):
the slope stays in ``[gamma, 1]``, ``|sigma(x)| <= |x|``, the slope is
``beta``-Lipschitz, and the gap to the unsmoothed ramp is uniformly bounded
by ``(1-gamma)^2/(2*pi*beta) + (1-gamma)/(pi*beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "ActivationParams",
    "evaluate",
    "deriv",
    "deriv2",
    "value_and_slope",
    "uniform_gap",
    "gap_bound",
    "leaky_ramp",
    "as_function",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ActivationParams:
    """Slope floor and smoothness scale of one member of the family."""

    gamma: float
    beta: float

    def __post_init__(self) -> None:
        if not (isinstance(self.gamma, (int, float)) and 0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie strictly in (0, 1), got {self.gamma!r}")
        if not (isinstance(self.beta, (int, float)) and math.isfinite(self.beta) and self.beta > 0.0):
            raise ValueError(f"beta must be positive and finite, got {self.beta!r}")


def _as_finite_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("activation input must be finite")
    return arr


def _maybe_scalar(out: np.ndarray, arr: np.ndarray):
    return float(out) if arr.ndim == 0 else out


def _ncdf(z: np.ndarray) -> np.ndarray:
    # standard normal CDF; erfc keeps full relative accuracy in the tails
    return 0.5 * special.erfc(-z * _INV_SQRT2)


def _scaled_arg(params: ActivationParams, arr: np.ndarray) -> np.ndarray:
    return (params.beta * _SQRT_2PI / (1.0 - params.gamma)) * arr


def evaluate(params: ActivationParams, x):
    """Activation value; accepts scalars or arrays (applied entrywise)."""
    arr = _as_finite_array(x)
    g, b = params.gamma, params.beta
    a = (1.0 - g) ** 2 / (2.0 * math.pi * b)
    z = _scaled_arg(params, arr)
    # exp underflows to 0 for large |x|, which is the correct limit here
    with np.errstate(under="ignore"):
        bump = np.exp(-0.5 * z * z)
    out = -a + a * bump + arr * _ncdf(z) + g * arr * _ncdf(-z)
    return _maybe_scalar(out, arr)


def deriv(params: ActivationParams, x):
    """First derivative; always inside ``[gamma, 1]`` and nondecreasing."""
    arr = _as_finite_array(x)
    g = params.gamma
    out = g + (1.0 - g) * _ncdf(_scaled_arg(params, arr))
    return _maybe_scalar(out, arr)


def deriv2(params: ActivationParams, x):
    """Second derivative; positive everywhere and bounded by ``beta``."""
    arr = _as_finite_array(x)
    z = _scaled_arg(params, arr)
    with np.errstate(under="ignore"):
        out = params.beta * np.exp(-0.5 * z * z)
    return _maybe_scalar(out, arr)


def value_and_slope(params: ActivationParams, x):
    """Value and first derivative in one pass (shares the CDF evaluation)."""
    arr = _as_finite_array(x)
    g, b = params.gamma, params.beta
    a = (1.0 - g) ** 2 / (2.0 * math.pi * b)
    z = _scaled_arg(params, arr)
    with np.errstate(under="ignore"):
        bump = np.exp(-0.5 * z * z)
    cdf_pos = _ncdf(z)
    cdf_neg = _ncdf(-z)
    val = -a + a * bump + arr * cdf_pos + g * arr * cdf_neg
    slope = g + (1.0 - g) * cdf_pos
    if arr.ndim == 0:
        return float(val), float(slope)
    return val, slope


def leaky_ramp(gamma: float, x):
    """The unsmoothed target ramp ``max(gamma*x, x)``."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.maximum(gamma * arr, arr)
    return _maybe_scalar(out, arr)


def uniform_gap(params: ActivationParams, grid) -> float:
    """Max deviation from the ramp over a grid of evaluation points."""
    arr = _as_finite_array(grid)
    if arr.size == 0:
        raise ValueError("uniform_gap needs a non-empty grid")
    gap = np.abs(evaluate(params, arr) - leaky_ramp(params.gamma, arr))
    return float(np.max(gap))


def gap_bound(params: ActivationParams) -> float:
    """Closed-form upper bound on the deviation from the ramp, any x."""
    g, b = params.gamma, params.beta
    return (1.0 - g) ** 2 / (2.0 * math.pi * b) + (1.0 - g) / (math.pi * b)


def as_function(params: ActivationParams):
    """Vectorized ``x -> sigma(x)`` closure (for the Gram/Hermite machinery)."""

    def sigma(x):
        return evaluate(params, x)

    sigma.label = f"smoothed_leaky_relu(gamma={params.gamma}, beta={params.beta})"
    return sigma
