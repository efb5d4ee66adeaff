"""Gradients, Jacobian blocks, the PL-style gradient floor, and the trainer.

Gradients are computed by reverse accumulation, which is algebraically
identical to the closed-form product of per-layer slope diagonals and
Kronecker factors (the tests rebuild that product literally and compare).
The trainer runs plain full-batch gradient descent and can log, per step,
the spectral quantities and invariant flags that a convergence certificate
promises to preserve.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from .activation import ActivationParams, value_and_slope
from .network import Dataset, ForwardTrace, Params, _check_dims, forward, vec

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .certificates import Certificate

__all__ = [
    "GradientBundle",
    "TrainConfig",
    "TrainLog",
    "grad",
    "jacobian_block",
    "pl_lower_bound",
    "train",
    "trainlog_to_csv",
    "trainlog_from_csv",
    "trainlog_summary",
]

DIVERGENCE_LOSS = 1e12


@dataclass(frozen=True)
class GradientBundle:
    """Per-layer loss gradients, shaped exactly like the parameters."""

    layers: tuple[np.ndarray, ...]
    sq_norm: float

    @property
    def norm(self) -> float:
        return math.sqrt(self.sq_norm)

    def layer(self, l: int) -> np.ndarray:
        return self.layers[l - 1]


def _backprop(trace: ForwardTrace, params: Params) -> GradientBundle:
    L = params.depth
    D = trace.residual()
    layers: list[np.ndarray] = [np.empty(0)] * L
    sq = 0.0
    for l in range(L, 0, -1):
        g = trace.F[l - 1].T @ D
        layers[l - 1] = g
        sq += float(np.vdot(g, g))
        if l > 1:
            D = (D @ params.weights[l - 1].T) * trace.sigma_prime(l - 1)
    return GradientBundle(layers=tuple(layers), sq_norm=sq)


def grad(
    params: Params,
    data: Dataset,
    act: ActivationParams,
    trace: Optional[ForwardTrace] = None,
) -> GradientBundle:
    """Gradient of the square loss with respect to every weight matrix."""
    if trace is None:
        trace = forward(params, data, act)
    else:
        _check_dims(params, data)
    return _backprop(trace, params)


def jacobian_block(
    params: Params,
    data: Dataset,
    act: ActivationParams,
    l: int,
    trace: Optional[ForwardTrace] = None,
) -> np.ndarray:
    """Dense Jacobian of vec(F_L) with respect to vec(W_l).

    Shape ``(N*n_L, n_{l-1}*n_l)`` under column-major vec on both sides.
    Built by propagating the layer-l seed through slope diagonals and weight
    contractions; cost is quadratic in the parameter count, so this is meant
    for diagnostics and verification, not training.
    """
    L = params.depth
    if not 1 <= l <= L:
        raise ValueError(f"layer index out of range: {l} (depth {L})")
    if trace is None:
        trace = forward(params, data, act)
    N = data.n_samples
    n_lm1, n_l = params.weights[l - 1].shape
    f_prev = trace.F[l - 1]

    # T[a, q, b, c] = d(F_t)[a, q] / d(W_l)[b, c], starting at t = l
    T = np.zeros((N, n_l, n_lm1, n_l))
    for q in range(n_l):
        T[:, q, :, q] = f_prev
    for t in range(l + 1, L + 1):
        T = T * trace.sigma_prime(t - 1)[:, :, None, None]
        T = np.einsum("aqbc,qr->arbc", T, params.weights[t - 1])

    n_L = params.widths[-1]
    # rows follow vec(F_L) (index a + q*N), cols follow vec(W_l) (index b + c*n_{l-1})
    return T.transpose(1, 0, 3, 2).reshape(N * n_L, n_lm1 * n_l)


def pl_lower_bound(trace: ForwardTrace, params: Params) -> float:
    """Certified floor for the norm of the second-layer gradient.

    Product of the smallest singular value of the first hidden layer output,
    the per-layer slope floors (minimum diagonal entry of each slope
    diagonal), the smallest singular values of the deep weights, and the
    residual norm.  Empty products (depth 2) equal 1.
    """
    L = params.depth
    if L < 2:
        raise ValueError("need depth >= 2")
    value = float(np.linalg.svd(trace.F[1], compute_uv=False)[-1])
    for p in range(3, L + 1):
        sigma_floor = float(np.min(trace.sigma_prime(p - 1)))
        sv_min = float(np.linalg.svd(params.weights[p - 1], compute_uv=False)[-1])
        value *= sigma_floor * sv_min
    r = trace.residual_vec()
    return value * float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Step size, step budget, stopping loss, and what to record.

    ``eta = 0`` is allowed as a diagnostic no-op run.  ``monitor`` may
    contain ``"spectra"`` to record per-step singular values even without a
    certificate (with a certificate they are always recorded).
    """

    eta: float
    max_steps: int
    stop_loss: float = 0.0
    monitor: frozenset = frozenset()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.eta) and self.eta >= 0.0):
            raise ValueError(f"eta must be finite and >= 0, got {self.eta}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if not (math.isfinite(self.stop_loss) and self.stop_loss >= 0.0):
            raise ValueError("stop_loss must be finite and >= 0")
        object.__setattr__(self, "monitor", frozenset(self.monitor))


@dataclass
class TrainLog:
    """Per-step history of a gradient-descent run.

    ``flags`` columns (present only for certified runs):
    deep-weight singular-value floor, weight-norm cap, first-layer
    singular-value floor, loss below the certified decay bound.
    """

    steps: np.ndarray
    loss: np.ndarray
    bound: np.ndarray
    grad_norm: np.ndarray
    sv_f1: Optional[np.ndarray]
    min_sv_w: Optional[np.ndarray]
    norm_w: Optional[np.ndarray]
    flags: Optional[np.ndarray]
    dist_to_ref: Optional[np.ndarray]
    final_params: Params
    eta: float
    alpha0: float
    diverged: bool
    stop_reason: str
    depth: int = field(default=0)

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def phi0(self) -> float:
        return float(self.loss[0])

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    def violation_counts(self) -> dict[str, int]:
        if self.flags is None:
            return {}
        names = ("sv_w", "norm_w", "sv_f1", "loss_bound")
        fails = ~self.flags
        return {name: int(fails[:, i].sum()) for i, name in enumerate(names)}


def train(
    params0: Params,
    data: Dataset,
    act: ActivationParams,
    cfg: TrainConfig,
    cert: Optional["Certificate"] = None,
    distance_ref: Optional[Params] = None,
) -> TrainLog:
    """Full-batch gradient descent from ``params0``.

    With a certificate, the step size must sit strictly below the certified
    cap, and every logged step carries the four trajectory-invariant flags
    plus the geometric decay bound.  A run is aborted (log retained) if the
    loss exceeds ``1e12`` or turns non-finite.
    """
    _check_dims(params0, data)
    L = params0.depth
    eta = float(cfg.eta)
    if cert is not None:
        if cert.vacuous:
            raise ValueError("certificate is vacuous (zero rate), cannot certify a step size")
        if not eta < cert.eta_max:
            raise ValueError(
                f"eta={eta} is not below the certified cap {cert.eta_max}"
            )
    if distance_ref is not None and (
        distance_ref.widths != params0.widths or distance_ref.d != params0.d
    ):
        raise ValueError("distance reference has a different architecture")

    X, Y = data.X, data.Y
    W = [w.copy() for w in params0.weights]
    n_rows = cfg.max_steps + 1
    loss_a = np.empty(n_rows)
    grad_a = np.empty(n_rows)
    bound_a = np.full(n_rows, np.nan)
    spectra = cert is not None or "spectra" in cfg.monitor
    sv_f1 = np.empty(n_rows) if spectra else None
    min_sv_w = np.empty((n_rows, max(L - 2, 0))) if spectra else None
    norm_w = np.empty((n_rows, L)) if spectra else None
    flags = np.zeros((n_rows, 4), dtype=bool) if cert is not None else None
    dist_a = np.empty(n_rows) if distance_ref is not None else None

    if cert is not None:
        decay = 1.0 - eta * cert.alpha0
        lam_floor = np.asarray(cert.lambda_min_deep) / 2.0
        norm_cap = 1.5 * np.asarray(cert.lambda_bar)
        f1_floor = cert.lambda_f / 2.0
    svd = np.linalg.svd

    phi0 = math.nan
    k = 0
    diverged = False
    stop_reason = "max_steps"
    slopes = [None] * (L - 1)
    while True:
        # forward, caching slopes for the backward pass
        Fs = [X]
        for l in range(1, L):
            g = Fs[-1] @ W[l - 1]
            val, sp = value_and_slope(act, g)
            slopes[l - 1] = sp
            Fs.append(val)
        out = Fs[-1] @ W[L - 1]
        E = out - Y
        loss_k = 0.5 * float(np.vdot(E, E))
        if k == 0:
            phi0 = loss_k

        D = E
        gsq = 0.0
        grads = [None] * L
        for l in range(L, 0, -1):
            g = Fs[l - 1].T @ D
            grads[l - 1] = g
            gsq += float(np.vdot(g, g))
            if l > 1:
                D = (D @ W[l - 1].T) * slopes[l - 2]

        loss_a[k] = loss_k
        grad_a[k] = math.sqrt(gsq)
        if spectra:
            sv_f1[k] = svd(Fs[1], compute_uv=False)[-1] if L >= 2 else math.nan
            for i, l in enumerate(range(3, L + 1)):
                min_sv_w[k, i] = svd(W[l - 1], compute_uv=False)[-1]
            for l in range(1, L + 1):
                norm_w[k, l - 1] = svd(W[l - 1], compute_uv=False)[0]
        if cert is not None:
            bound_k = decay**k * phi0
            bound_a[k] = bound_k
            flags[k, 0] = bool(np.all(min_sv_w[k] >= lam_floor))
            flags[k, 1] = bool(np.all(norm_w[k] <= norm_cap))
            flags[k, 2] = bool(sv_f1[k] >= f1_floor)
            flags[k, 3] = loss_k <= bound_k
        if dist_a is not None:
            acc = 0.0
            for w, r in zip(W, distance_ref.weights):
                delta = w - r
                acc += float(np.vdot(delta, delta))
            dist_a[k] = math.sqrt(acc)

        if not math.isfinite(loss_k) or loss_k > DIVERGENCE_LOSS:
            diverged = True
            stop_reason = "diverged"
            break
        if loss_k <= cfg.stop_loss:
            stop_reason = "stop_loss"
            break
        if k == cfg.max_steps:
            break
        for l in range(L):
            W[l] -= eta * grads[l]
        k += 1

    n = k + 1
    return TrainLog(
        steps=np.arange(n),
        loss=loss_a[:n].copy(),
        bound=bound_a[:n].copy(),
        grad_norm=grad_a[:n].copy(),
        sv_f1=sv_f1[:n].copy() if spectra else None,
        min_sv_w=min_sv_w[:n].copy() if spectra else None,
        norm_w=norm_w[:n].copy() if spectra else None,
        flags=flags[:n].copy() if flags is not None else None,
        dist_to_ref=dist_a[:n].copy() if dist_a is not None else None,
        final_params=Params(tuple(w.copy() for w in W)),
        eta=eta,
        alpha0=cert.alpha0 if cert is not None else math.nan,
        diverged=diverged,
        stop_reason=stop_reason,
        depth=L,
    )


# ---------------------------------------------------------------------------
# Log export
# ---------------------------------------------------------------------------


def trainlog_to_csv(log: TrainLog, path) -> None:
    """Fixed-order CSV: k, loss, bound, sv_F1, min_sv_W3.., max_norm_W1..,
    grad_norm, then the four flag columns (certified runs only)."""
    L = log.depth
    header = ["k", "loss", "bound"]
    has_spectra = log.sv_f1 is not None
    if has_spectra:
        header.append("sv_F1")
        header.extend(f"min_sv_W{l}" for l in range(3, L + 1))
        header.extend(f"max_norm_W{l}" for l in range(1, L + 1))
    header.append("grad_norm")
    has_flags = log.flags is not None
    if has_flags:
        header.extend(["flag_sv_w", "flag_norm_w", "flag_sv_f1", "flag_loss_bound"])

    def fmt(v: float) -> str:
        return format(float(v), ".17g")

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(log.n_steps):
            row = [int(log.steps[i]), fmt(log.loss[i]), fmt(log.bound[i])]
            if has_spectra:
                row.append(fmt(log.sv_f1[i]))
                row.extend(fmt(v) for v in log.min_sv_w[i])
                row.extend(fmt(v) for v in log.norm_w[i])
            row.append(fmt(log.grad_norm[i]))
            if has_flags:
                row.extend(int(b) for b in log.flags[i])
            writer.writerow(row)


def trainlog_from_csv(path) -> dict[str, np.ndarray]:
    """Re-parse an exported training log into named numeric columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if not rows or any(len(row) != len(header) for row in rows):
        raise ValueError(f"malformed training log CSV: {path}")
    table = np.asarray(rows, dtype=np.float64)
    return {name: table[:, i] for i, name in enumerate(header)}


def trainlog_summary(log: TrainLog) -> dict:
    """JSON-ready run summary."""
    return {
        "steps": int(log.steps[-1]),
        "records": log.n_steps,
        "initial_loss": log.phi0,
        "final_loss": log.final_loss,
        "eta": log.eta,
        "alpha0": None if math.isnan(log.alpha0) else log.alpha0,
        "diverged": log.diverged,
        "stop_reason": log.stop_reason,
        "violations": log.violation_counts(),
    }
