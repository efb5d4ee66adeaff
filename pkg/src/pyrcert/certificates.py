"""Convergence certificates: initialization spectra, rate constants, and
trajectory-invariant monitoring.

A certificate gathers, for a concrete (parameters, dataset, activation)
triple: spectral proxies of every initial weight matrix, the smallest
singular value of the first hidden layer's output, verdicts for the two
initial-condition inequalities, and the derived rate constants

* ``alpha0`` - certified geometric contraction rate of the loss,
* ``q0``    - gradient-smoothness proxy bounding the admissible step size,
* ``q1``    - prefactor of the parameter-distance decay,
* ``eta_max = min(1/alpha0, 1/q0)``.

Verdicts compare exactly computed floats with no tolerance; each comes with
the ratio LHS/RHS ("slack", >= 1 means the condition holds).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .activation import ActivationParams, evaluate
from .network import Dataset, Params, forward, loss_of

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .gradients import TrainLog

__all__ = [
    "Certificate",
    "AssumptionVerdict",
    "InvariantReport",
    "DistanceReport",
    "spectral_quantities",
    "lambda_f",
    "check_assumption",
    "rate_constants",
    "predicted_decay",
    "certify",
    "monitor_invariants",
    "certificate_to_json",
    "certificate_from_json",
]

DEGENERATE_LAMBDA_F = 1e-12


@dataclass(frozen=True)
class AssumptionVerdict:
    """Verdicts and slack ratios for the two initial-condition inequalities."""

    cond1_holds: bool
    cond1_slack: float
    cond2_holds: bool
    cond2_slack: float
    reason: Optional[str] = None


@dataclass(frozen=True)
class Certificate:
    """All named constants of a convergence certificate."""

    lambda_bar: tuple[float, ...]
    lambda_min_deep: tuple[float, ...]  # layers 3..L; empty at depth 2
    lambda_f: float
    phi0: float
    alpha0: float
    q0: float
    q1: float
    r_product: float
    eta_max: float
    cond1_holds: bool
    cond1_slack: float
    cond2_holds: bool
    cond2_slack: float
    gamma: float
    beta: float
    depth: int
    x_fro: float
    x_op: float
    vacuous: bool
    degenerate_reason: Optional[str]
    depth2_convention: bool

    @property
    def certified(self) -> bool:
        return self.cond1_holds and self.cond2_holds and not self.vacuous


def spectral_quantities(params0: Params) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Upper spectral proxies for every layer and singular-value floors for
    layers 3..L.

    The first two layers get the shifted proxy ``(2/3)*(1 + ||W||_2)``; the
    rest use the operator norm directly.
    """
    bars: list[float] = []
    mins: list[float] = []
    for l, w in enumerate(params0.weights, start=1):
        try:
            svs = np.linalg.svd(w, compute_uv=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - numerical edge
            raise ValueError(f"SVD failed at layer {l}") from exc
        top = float(svs[0])
        if l <= 2:
            bars.append((2.0 / 3.0) * (1.0 + top))
        else:
            bars.append(top)
            mins.append(float(svs[-1]))
    return tuple(bars), tuple(mins)


def lambda_f(w1: np.ndarray, x: np.ndarray, act: ActivationParams) -> float:
    """Smallest singular value of the first hidden layer output at init."""
    f1 = evaluate(act, np.asarray(x, dtype=np.float64) @ np.asarray(w1, dtype=np.float64))
    return float(np.linalg.svd(f1, compute_uv=False)[-1])


def _deep_products(lambda_bar: tuple[float, ...], lambda_min_deep: tuple[float, ...]):
    bar_deep = float(np.prod(lambda_bar[2:])) if len(lambda_bar) > 2 else 1.0
    min_deep = float(np.prod(lambda_min_deep)) if lambda_min_deep else 1.0
    return bar_deep, min_deep


def check_assumption(
    lambda_bar: tuple[float, ...],
    lambda_min_deep: tuple[float, ...],
    lam_f: float,
    X: np.ndarray,
    phi0: float,
    gamma: float,
) -> AssumptionVerdict:
    """Evaluate both initial-condition inequalities literally.

    At depth 2 the deep products are empty (= 1) and the max() term keeps
    only its last two arguments, since the minimum over an empty layer range
    would be +inf and annihilate the first argument.
    """
    L = len(lambda_bar)
    X = np.asarray(X, dtype=np.float64)
    x_fro = float(np.linalg.norm(X, "fro"))
    x_op = float(np.linalg.norm(X, 2))
    bar_deep, min_deep = _deep_products(lambda_bar, lambda_min_deep)
    pref = (gamma**4 / 3.0) * (6.0 / gamma**2) ** L
    root_phi = math.sqrt(2.0 * phi0)
    ratio = bar_deep / min_deep**2 if min_deep > 0 else math.inf

    if L >= 3:
        pair_min = min(
            lb * lm for lb, lm in zip(lambda_bar[2:], lambda_min_deep)
        )
        first_arg = (
            2.0 * lambda_bar[0] * lambda_bar[1] / pair_min if pair_min > 0 else math.inf
        )
        max_term = max(first_arg, lambda_bar[0], lambda_bar[1])
    else:
        max_term = max(lambda_bar[0], lambda_bar[1])

    rhs1 = pref * x_fro * root_phi * ratio * max_term
    rhs2 = 2.0 * pref * x_op * x_fro * root_phi * ratio * lambda_bar[1]
    lhs1 = lam_f**2
    lhs2 = lam_f**3

    cond1 = lhs1 >= rhs1
    cond2 = lhs2 >= rhs2
    slack1 = lhs1 / rhs1 if rhs1 > 0 else math.inf
    slack2 = lhs2 / rhs2 if rhs2 > 0 else math.inf
    reason = None
    if lam_f <= DEGENERATE_LAMBDA_F and phi0 > 0:
        reason = "degenerate data"
    return AssumptionVerdict(
        cond1_holds=bool(cond1),
        cond1_slack=float(slack1),
        cond2_holds=bool(cond2),
        cond2_slack=float(slack2),
        reason=reason,
    )


def rate_constants(
    lambda_bar: tuple[float, ...],
    lambda_min_deep: tuple[float, ...],
    lam_f: float,
    X: np.ndarray,
    phi0: float,
    act: ActivationParams,
) -> tuple[float, float, float, float, float, bool]:
    """Literal evaluation of (alpha0, q0, q1, r_product, eta_max, vacuous)."""
    L = len(lambda_bar)
    gamma, beta = act.gamma, act.beta
    X = np.asarray(X, dtype=np.float64)
    x_fro = float(np.linalg.norm(X, "fro"))
    _, min_deep = _deep_products(lambda_bar, lambda_min_deep)
    root_phi = math.sqrt(2.0 * phi0)

    alpha0 = (4.0 / gamma**4) * (gamma**2 / 4.0) ** L * lam_f**2 * min_deep**2
    r_product = float(np.prod([max(1.0, 1.5 * lb) for lb in lambda_bar]))
    bar_all = float(np.prod(lambda_bar))
    bar_min = min(lambda_bar)
    ls = L * math.sqrt(L)
    q0 = (
        ls * 1.5 ** (2 * (L - 1)) * x_fro**2 * bar_all**2 / bar_min**2
        + ls * x_fro * (1.0 + L * beta * x_fro * r_product) * r_product * root_phi
    )
    vacuous = not alpha0 > 0.0
    if vacuous:
        q1 = math.inf if phi0 > 0 else 0.0
        eta_max = math.nan
    else:
        sum_term = sum(bar_all / lb for lb in lambda_bar)
        q1 = (4.0 / 3.0) * 1.5**L * (x_fro / alpha0) * sum_term * root_phi
        eta_max = min(1.0 / alpha0, 1.0 / q0) if q0 > 0 else 1.0 / alpha0
    return float(alpha0), float(q0), float(q1), r_product, float(eta_max), vacuous


def predicted_decay(alpha0: float, eta: float, phi0: float, k) -> float | np.ndarray:
    """Certified loss ceiling ``(1 - eta*alpha0)**k * phi0``."""
    rate = eta * alpha0
    if not 0.0 < rate < 1.0:
        raise ValueError(f"eta*alpha0 must lie in (0, 1), got {rate}")
    ks = np.asarray(k)
    if np.any(ks < 0):
        raise ValueError("step index must be >= 0")
    out = (1.0 - rate) ** ks * phi0
    return float(out) if out.ndim == 0 else out


def certify(params0: Params, data: Dataset, act: ActivationParams) -> Certificate:
    """Compute the full certificate for an initialization on a dataset.

    Requires the pyramidal shape plus a first layer at least as wide as the
    sample count (the width hypothesis behind the gradient floor).
    """
    shape = params0.shape  # validates the pyramidal ordering
    if shape.widths[0] < data.n_samples:
        raise ValueError(
            f"certificate requires first-layer width >= sample count "
            f"(n1={shape.widths[0]}, N={data.n_samples})"
        )
    trace = forward(params0, data, act)
    phi0 = loss_of(trace)
    lambda_bar, lambda_min_deep = spectral_quantities(params0)
    lam_f = float(np.linalg.svd(trace.F[1], compute_uv=False)[-1])
    verdict = check_assumption(lambda_bar, lambda_min_deep, lam_f, data.X, phi0, act.gamma)
    alpha0, q0, q1, r_product, eta_max, vacuous = rate_constants(
        lambda_bar, lambda_min_deep, lam_f, data.X, phi0, act
    )
    return Certificate(
        lambda_bar=lambda_bar,
        lambda_min_deep=lambda_min_deep,
        lambda_f=lam_f,
        phi0=phi0,
        alpha0=alpha0,
        q0=q0,
        q1=q1,
        r_product=r_product,
        eta_max=eta_max,
        cond1_holds=verdict.cond1_holds,
        cond1_slack=verdict.cond1_slack,
        cond2_holds=verdict.cond2_holds,
        cond2_slack=verdict.cond2_slack,
        gamma=act.gamma,
        beta=act.beta,
        depth=shape.depth,
        x_fro=float(np.linalg.norm(data.X, "fro")),
        x_op=float(np.linalg.norm(data.X, 2)),
        vacuous=vacuous,
        degenerate_reason=verdict.reason,
        depth2_convention=shape.depth == 2,
    )


# ---------------------------------------------------------------------------
# Trajectory monitoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceReport:
    """Parameter-distance decay check against the final iterate.

    ``lhs`` is the remaining path length ``eta * sum of later gradient
    norms``, a rigorous upper bound on the distance from step k to the last
    iterate; ``rhs`` is the certified envelope plus the tail slack measured
    at the end of the checked window.
    """

    holds: bool
    k_window: int
    eps_slack: float
    lhs: np.ndarray
    rhs: np.ndarray
    first_violation: Optional[int]


@dataclass(frozen=True)
class InvariantReport:
    """Per-step verdicts for the four certified trajectory invariants."""

    flags: np.ndarray  # (n_steps, 4) bool
    first_violation: dict[str, Optional[int]]
    n_violations: dict[str, int]
    all_hold: bool
    distance: Optional[DistanceReport]

    CHECKS = ("sv_w", "norm_w", "sv_f1", "loss_bound")


def _first_false(col: np.ndarray) -> Optional[int]:
    bad = np.flatnonzero(~col)
    return int(bad[0]) if bad.size else None


def monitor_invariants(
    log: "TrainLog",
    cert: Certificate,
    distance_upto_loss: Optional[float] = None,
) -> InvariantReport:
    """Re-derive the invariant flags of a logged run against a certificate.

    The log must carry per-step spectra.  When ``distance_upto_loss`` is
    given, the parameter-distance envelope is additionally checked for every
    step up to the first step whose loss falls below that threshold, using
    the final iterate as the limit proxy.
    """
    if log.sv_f1 is None or log.min_sv_w is None or log.norm_w is None:
        raise ValueError("log has no recorded spectra; rerun with monitoring enabled")
    n = log.n_steps
    flags = np.zeros((n, 4), dtype=bool)
    lam_floor = np.asarray(cert.lambda_min_deep) / 2.0
    norm_cap = 1.5 * np.asarray(cert.lambda_bar)
    flags[:, 0] = np.all(log.min_sv_w >= lam_floor[None, :], axis=1)
    flags[:, 1] = np.all(log.norm_w <= norm_cap[None, :], axis=1)
    flags[:, 2] = log.sv_f1 >= cert.lambda_f / 2.0
    decay = 1.0 - log.eta * cert.alpha0
    bound = decay ** np.arange(n, dtype=np.float64) * log.phi0
    flags[:, 3] = log.loss <= bound

    first = {
        name: _first_false(flags[:, i]) for i, name in enumerate(InvariantReport.CHECKS)
    }
    counts = {
        name: int((~flags[:, i]).sum()) for i, name in enumerate(InvariantReport.CHECKS)
    }

    distance = None
    if distance_upto_loss is not None:
        hit = np.flatnonzero(log.loss <= distance_upto_loss)
        k_window = int(hit[0]) if hit.size else n - 1
        # eta * suffix sums of gradient norms: movement still ahead of step k,
        # an upper bound on the distance to the final iterate
        moves = log.eta * log.grad_norm[: n - 1]
        suffix = np.concatenate([np.cumsum(moves[::-1])[::-1], [0.0]])
        eps_slack = float(suffix[k_window])
        ks = np.arange(k_window + 1, dtype=np.float64)
        rhs = decay ** (ks / 2.0) * cert.q1 + eps_slack
        lhs = suffix[: k_window + 1]
        ok = lhs <= rhs
        distance = DistanceReport(
            holds=bool(np.all(ok)),
            k_window=k_window,
            eps_slack=eps_slack,
            lhs=lhs,
            rhs=rhs,
            first_violation=_first_false(ok),
        )

    all_hold = bool(np.all(flags)) and (distance is None or distance.holds)
    return InvariantReport(
        flags=flags,
        first_violation=first,
        n_violations=counts,
        all_hold=all_hold,
        distance=distance,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def certificate_to_json(cert: Certificate, path=None) -> dict:
    """JSON payload with every named constant and both condition slacks."""

    def clean(v: float) -> Optional[float]:
        return None if (isinstance(v, float) and not math.isfinite(v)) else v

    payload = {
        "lambda_bar": list(cert.lambda_bar),
        "lambda_min_deep": list(cert.lambda_min_deep),
        "lambda_f": cert.lambda_f,
        "phi0": cert.phi0,
        "alpha0": cert.alpha0,
        "q0": cert.q0,
        "q1": clean(cert.q1),
        "r_product": cert.r_product,
        "eta_max": clean(cert.eta_max),
        "init_condition_1": {"holds": cert.cond1_holds, "slack": clean(cert.cond1_slack)},
        "init_condition_2": {"holds": cert.cond2_holds, "slack": clean(cert.cond2_slack)},
        "gamma": cert.gamma,
        "beta": cert.beta,
        "depth": cert.depth,
        "x_fro": cert.x_fro,
        "x_op": cert.x_op,
        "vacuous": cert.vacuous,
        "degenerate_reason": cert.degenerate_reason,
        "depth2_convention": cert.depth2_convention,
        "certified": cert.certified,
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
    return payload


def certificate_from_json(path) -> Certificate:
    with open(path) as fh:
        payload = json.load(fh)

    def num(v, default=math.inf):
        return default if v is None else float(v)

    return Certificate(
        lambda_bar=tuple(payload["lambda_bar"]),
        lambda_min_deep=tuple(payload["lambda_min_deep"]),
        lambda_f=float(payload["lambda_f"]),
        phi0=float(payload["phi0"]),
        alpha0=float(payload["alpha0"]),
        q0=float(payload["q0"]),
        q1=num(payload["q1"]),
        r_product=float(payload["r_product"]),
        eta_max=num(payload["eta_max"], default=math.nan),
        cond1_holds=bool(payload["init_condition_1"]["holds"]),
        cond1_slack=num(payload["init_condition_1"]["slack"]),
        cond2_holds=bool(payload["init_condition_2"]["holds"]),
        cond2_slack=num(payload["init_condition_2"]["slack"]),
        gamma=float(payload["gamma"]),
        beta=float(payload["beta"]),
        depth=int(payload["depth"]),
        x_fro=float(payload["x_fro"]),
        x_op=float(payload["x_op"]),
        vacuous=bool(payload["vacuous"]),
        degenerate_reason=payload["degenerate_reason"],
        depth2_convention=bool(payload["depth2_convention"]),
    )
