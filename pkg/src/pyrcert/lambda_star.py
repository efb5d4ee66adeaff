"""Expected first-layer Gram matrix and its smallest eigenvalue (lambda*).

For data rows of norm sqrt(d) and Gaussian first-layer weights of variance
1/d, the expected Gram matrix of the activated features admits two
estimators:

* plain Monte Carlo over weight draws, with batched standard errors, and
* a truncated Hermite series, using that the Gram of the r-fold Khatri-Rao
  power equals the entrywise r-th power of X X^T, so no d^r-wide matrix is
  ever materialized.

The module also provides the Khatri-Rao powers themselves (for the
smallest-singular-value bound) and the normalized probabilists' Hermite
polynomials and coefficients that feed the series.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

__all__ = [
    "GramEstimate",
    "HermiteSpec",
    "hermite_poly",
    "hermite_coeff",
    "hermite_coeffs",
    "khatri_rao_power",
    "kr_min_singular",
    "gram_mc",
    "gram_hermite",
    "lambda_star",
    "sigma_linear",
]

MAX_HERMITE_ORDER = 200
KR_ENTRY_BUDGET = 10**8
COEFF_CONVERGENCE_TOL = 1e-8


def sigma_linear(x):
    """Identity activation (the degenerate, purely linear case)."""
    return np.asarray(x, dtype=np.float64)


sigma_linear.label = "linear"


@dataclass(frozen=True)
class GramEstimate:
    """An estimate of the expected feature Gram matrix and its bottom eigenvalue."""

    gram: np.ndarray
    lambda_min: float
    method: str  # "monte_carlo" | "hermite"
    n_samples: Optional[int] = None
    r_max: Optional[int] = None
    stderr: Optional[np.ndarray] = None
    tail_mass: Optional[float] = None
    seed: Optional[int] = None

    @property
    def stderr_max(self) -> Optional[float]:
        return None if self.stderr is None else float(np.max(self.stderr))


@dataclass(frozen=True)
class HermiteSpec:
    """Hermite coefficients of a target function under the Gaussian weight."""

    coeffs: np.ndarray  # mu_0 .. mu_{r_max}
    quad_order: int
    target: str
    converged: np.ndarray  # per-coefficient quadrature stability
    norm_sq: float  # quadrature value of E[sigma(g)^2]

    @property
    def r_max(self) -> int:
        return len(self.coeffs) - 1

    def tail_mass(self, r: int) -> float:
        """Coefficient mass beyond order ``r`` (clamped at zero)."""
        if r < 0:
            raise ValueError("order must be >= 0")
        head = float(np.sum(self.coeffs[: r + 1] ** 2))
        return max(self.norm_sq - head, 0.0)


def _check_order(r: int) -> int:
    r = int(r)
    if r < 0:
        raise ValueError(f"order must be >= 0, got {r}")
    if r > MAX_HERMITE_ORDER:
        raise ValueError(
            f"order {r} exceeds the 64-bit stability cap {MAX_HERMITE_ORDER}"
        )
    return r


def _hermite_table(x: np.ndarray, r_max: int) -> np.ndarray:
    """Values h_0..h_{r_max} at each point, by the three-term recurrence."""
    H = np.empty((r_max + 1,) + x.shape)
    H[0] = 1.0
    if r_max >= 1:
        H[1] = x
    for r in range(1, r_max):
        H[r + 1] = (x * H[r] - math.sqrt(r) * H[r - 1]) / math.sqrt(r + 1)
    return H


def hermite_poly(r: int, x):
    """Normalized probabilists' Hermite polynomial h_r, orthonormal under
    the standard Gaussian weight."""
    r = _check_order(r)
    arr = np.asarray(x, dtype=np.float64)
    out = _hermite_table(np.atleast_1d(arr), r)[r]
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _coeffs_at_order(sigma: Callable, r_max: int, quad_order: int) -> tuple[np.ndarray, float]:
    # roots_hermite stays stable at high orders, unlike the power-basis route
    nodes, weights = special.roots_hermite(quad_order)
    y = math.sqrt(2.0) * nodes  # Gauss-Hermite weight e^{-x^2} -> Gaussian weight
    vals = np.asarray(sigma(y), dtype=np.float64)
    H = _hermite_table(y, r_max)
    scaled = weights * vals / math.sqrt(math.pi)
    coeffs = H @ scaled
    norm_sq = float(np.sum(weights * vals * vals) / math.sqrt(math.pi))
    return coeffs, norm_sq


def hermite_coeffs(sigma: Callable, r_max: int, quad_order: int = 200) -> HermiteSpec:
    """Coefficients mu_0..mu_{r_max} by Gauss-Hermite quadrature.

    Each coefficient is recomputed at double the order; a coefficient whose
    value moves by 1e-8 or more is flagged as non-converged (with a warning).
    """
    r_max = _check_order(r_max)
    if quad_order < r_max + 1:
        raise ValueError("quad_order must exceed the highest requested order")
    base, _ = _coeffs_at_order(sigma, r_max, quad_order)
    refined, norm_sq = _coeffs_at_order(sigma, r_max, 2 * quad_order)
    converged = np.abs(refined - base) < COEFF_CONVERGENCE_TOL
    if not np.all(converged):
        bad = np.flatnonzero(~converged)
        warnings.warn(
            f"Hermite coefficients {bad.tolist()} did not stabilize under "
            f"quadrature refinement (order {quad_order} -> {2 * quad_order})",
            stacklevel=2,
        )
    label = getattr(sigma, "label", getattr(sigma, "__name__", "sigma"))
    return HermiteSpec(
        coeffs=refined,
        quad_order=quad_order,
        target=str(label),
        converged=converged,
        norm_sq=norm_sq,
    )


def hermite_coeff(sigma: Callable, r: int, quad_order: int = 200) -> float:
    """Single Hermite coefficient mu_r of ``sigma``."""
    return float(hermite_coeffs(sigma, r, quad_order).coeffs[r])


# ---------------------------------------------------------------------------
# Khatri-Rao powers
# ---------------------------------------------------------------------------


def khatri_rao_power(X: np.ndarray, r: int) -> np.ndarray:
    """Row-wise r-fold Kronecker power: row i becomes x_i x ... x x_i (r times)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    r = int(r)
    if r < 1:
        raise ValueError(f"power must be >= 1, got {r}")
    n, d = X.shape
    entries = n * d**r
    if entries > KR_ENTRY_BUDGET:
        raise ValueError(
            f"Khatri-Rao power needs {entries:.3g} entries "
            f"({entries * 8 / 2**30:.2f} GiB), over the {KR_ENTRY_BUDGET:.0e} budget"
        )
    K = X.copy()
    for _ in range(r - 1):
        K = (K[:, :, None] * X[:, None, :]).reshape(n, -1)
    return K


def kr_min_singular(X: np.ndarray, r: int) -> tuple[float, float]:
    """Exact smallest singular value of the r-th Khatri-Rao power, plus the
    coherence-based deterministic floor.

    The floor is ``sign(v) * sqrt(|v|)`` with
    ``v = d^r - N * max_{i != j} |<x_i, x_j>|^r``; it assumes rows of norm
    sqrt(d) (as produced by :func:`pyrcert.initializers.sphere_data`) and is
    vacuous (non-positive) whenever the data are too coherent.
    """
    X = np.asarray(X, dtype=np.float64)
    K = khatri_rao_power(X, r)
    exact = float(np.linalg.svd(K, compute_uv=False)[-1])
    n, d = X.shape
    if n > 1:
        G = X @ X.T
        off = np.abs(G[~np.eye(n, dtype=bool)])
        coherence = float(np.max(off))
    else:
        coherence = 0.0
    v = float(d) ** r - n * coherence**r
    bound = math.copysign(math.sqrt(abs(v)), v)
    return exact, bound


# ---------------------------------------------------------------------------
# Gram estimators
# ---------------------------------------------------------------------------


def _lambda_min_sym(G: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((G + G.T) / 2.0)[0])


def gram_mc(
    X: np.ndarray,
    sigma: Callable,
    n_samples: int,
    seed: int = 0,
    n_batches: int = 10,
) -> GramEstimate:
    """Monte Carlo estimate of E[sigma(Xw) sigma(Xw)^T], w ~ N(0, I_d/d).

    Samples are split across independent substreams (one per batch) and
    reduced in batch order, so a given (seed, n_samples) pair is bit
    reproducible.  Per-entry standard errors come from the batch means.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n_batches = max(1, min(int(n_batches), n_samples))
    N, d = X.shape
    scale = 1.0 / math.sqrt(d)
    sizes = [n_samples // n_batches] * n_batches
    for i in range(n_samples % n_batches):
        sizes[i] += 1
    streams = np.random.SeedSequence(seed).spawn(n_batches)

    total = np.zeros((N, N))
    batch_means = np.empty((n_batches, N, N))
    for b, (size, ss) in enumerate(zip(sizes, streams)):
        rng = np.random.default_rng(ss)
        W = rng.normal(0.0, scale, size=(d, size))
        S = np.asarray(sigma(X @ W), dtype=np.float64)
        contrib = S @ S.T
        total += contrib
        batch_means[b] = contrib / size
    G = total / n_samples
    if n_batches > 1:
        stderr = np.std(batch_means, axis=0, ddof=1) / math.sqrt(n_batches)
    else:
        stderr = np.full((N, N), np.nan)
    return GramEstimate(
        gram=G,
        lambda_min=_lambda_min_sym(G),
        method="monte_carlo",
        n_samples=n_samples,
        stderr=stderr,
        seed=seed,
    )


def gram_hermite(X: np.ndarray, coeffs: HermiteSpec, r_max: Optional[int] = None) -> GramEstimate:
    """Truncated Hermite-series Gram matrix for norm-sqrt(d) rows.

    Entry (i, j) is ``sum_k mu_k^2 (<x_i, x_j>/d)^k`` up to ``r_max``; each
    term is positive semidefinite, so the bottom eigenvalue is nondecreasing
    in the truncation order.  Rejects rows whose norm deviates from sqrt(d).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    N, d = X.shape
    norms = np.linalg.norm(X, axis=1)
    if not np.allclose(norms, math.sqrt(d), rtol=1e-8, atol=1e-8):
        raise ValueError("rows must have norm sqrt(d) for the series expansion")
    if r_max is None:
        r_max = coeffs.r_max
    r_max = int(r_max)
    if r_max < 0 or r_max > coeffs.r_max:
        raise ValueError(f"r_max must lie in [0, {coeffs.r_max}], got {r_max}")
    C = (X @ X.T) / d
    G = np.zeros((N, N))
    power = np.ones((N, N))
    for k in range(r_max + 1):
        if k > 0:
            power = power * C
        G += coeffs.coeffs[k] ** 2 * power
    return GramEstimate(
        gram=G,
        lambda_min=_lambda_min_sym(G),
        method="hermite",
        r_max=r_max,
        tail_mass=coeffs.tail_mass(r_max),
    )


def lambda_star(G) -> float:
    """Smallest eigenvalue of a (near-)symmetric Gram matrix.

    Accepts a :class:`GramEstimate` or a raw matrix; asymmetry beyond 1e-8
    (absolute, entrywise) is rejected.
    """
    M = G.gram if isinstance(G, GramEstimate) else np.asarray(G, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("Gram matrix must be square")
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > 1e-8:
        raise ValueError(f"matrix is asymmetric (max |G - G^T| = {asym:.3g})")
    return _lambda_min_sym(M)
