"""Pyramidal fully-connected networks: shapes, data, forward pass, square loss.

Conventions fixed here and relied on everywhere else:

* A network with depth ``L`` has weight matrices ``W_l`` of shape
  ``(n_{l-1}, n_l)`` with ``n_0 = d``.  Hidden layers ``1..L-1`` apply the
  activation entrywise; the output layer is linear.
* ``vec`` is column-major (columns concatenated top to bottom).  All
  Jacobian and gradient index arithmetic in :mod:`pyrcert.gradients` assumes
  this ordering.
* Parameter distance is the root of summed squared Frobenius norms.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .activation import ActivationParams, deriv, evaluate

__all__ = [
    "Shape",
    "Dataset",
    "Params",
    "ForwardTrace",
    "forward",
    "loss",
    "loss_of",
    "vec",
    "unvec",
    "theta_distance",
    "dataset_to_csv",
    "dataset_from_csv",
    "dataset_to_json",
    "dataset_from_json",
    "params_to_json",
    "params_from_json",
]

_FLOAT_FMT = ".17g"


@dataclass(frozen=True)
class Shape:
    """Input dimension plus per-layer widths ``n_1..n_L`` (pyramidal)."""

    d: int
    widths: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if int(self.d) < 1:
            raise ValueError(f"input dimension must be >= 1, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        if len(self.widths) < 2:
            raise ValueError("depth must be at least 2 (one hidden + output layer)")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"all widths must be positive, got {self.widths}")
        deep = self.widths[1:]
        if any(a < b for a, b in zip(deep, deep[1:])):
            raise ValueError(
                f"widths from the second layer on must be non-increasing, got {self.widths}"
            )

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def dims(self) -> tuple[int, ...]:
        """(n_0, n_1, ..., n_L) with n_0 = d."""
        return (self.d, *self.widths)


@dataclass(frozen=True)
class Dataset:
    """Training inputs ``X`` (N x d) and targets ``Y`` (N x n_L)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must both be 2-D arrays")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if X.shape[0] < 1:
            raise ValueError("need at least one sample")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_out(self) -> int:
        return self.Y.shape[1]

    def y_vec(self) -> np.ndarray:
        return vec(self.Y)


@dataclass(frozen=True)
class Params:
    """Weight tuple ``(W_1, ..., W_L)`` with consistent inner dimensions."""

    weights: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        if len(ws) < 1:
            raise ValueError("need at least one weight matrix")
        for i, w in enumerate(ws, start=1):
            if w.ndim != 2:
                raise ValueError(f"W_{i} must be 2-D, got shape {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"W_{i} has non-finite entries")
        for i in range(1, len(ws)):
            if ws[i - 1].shape[1] != ws[i].shape[0]:
                raise ValueError(
                    f"layer {i} outputs {ws[i - 1].shape[1]} units but layer "
                    f"{i + 1} expects {ws[i].shape[0]}"
                )
        object.__setattr__(self, "weights", ws)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights)

    @property
    def shape(self) -> Shape:
        """Shape of this parameter tuple; raises if not pyramidal."""
        return Shape(d=self.d, widths=self.widths)

    def copy(self) -> "Params":
        return Params(tuple(w.copy() for w in self.weights))


@dataclass
class ForwardTrace:
    """Pre-activations and layer outputs from one full-dataset pass.

    ``F[0]`` is the input, ``F[l] = sigma(G[l])`` entrywise for hidden
    layers, and ``F[L] = G[L]`` (linear output).  Activation slopes are
    materialized lazily per layer and cached.
    """

    data: Dataset
    act: ActivationParams
    G: tuple[np.ndarray, ...]
    F: tuple[np.ndarray, ...]
    _slopes: dict = field(default_factory=dict, repr=False)

    @property
    def depth(self) -> int:
        return len(self.G)

    @property
    def output(self) -> np.ndarray:
        return self.F[-1]

    def residual(self) -> np.ndarray:
        return self.F[-1] - self.data.Y

    def residual_vec(self) -> np.ndarray:
        return vec(self.residual())

    def sigma_prime(self, layer: int) -> np.ndarray:
        """Entrywise activation slope at hidden layer ``layer`` (1-based)."""
        if not 1 <= layer <= self.depth - 1:
            raise ValueError(f"hidden layer index out of range: {layer}")
        if layer not in self._slopes:
            self._slopes[layer] = deriv(self.act, self.G[layer - 1])
        return self._slopes[layer]


def _check_dims(params: Params, data: Dataset) -> None:
    if data.d != params.d:
        raise ValueError(
            f"layer 1: input dimension mismatch (X has {data.d} columns, "
            f"W_1 expects {params.d})"
        )
    if data.n_out != params.widths[-1]:
        raise ValueError(
            f"layer {params.depth}: output dimension mismatch (Y has "
            f"{data.n_out} columns, W_{params.depth} produces {params.widths[-1]})"
        )


def forward(params: Params, data: Dataset, act: ActivationParams) -> ForwardTrace:
    """Forward pass over the whole dataset; deterministic."""
    _check_dims(params, data)
    L = params.depth
    F = [data.X]
    G = []
    for l in range(1, L + 1):
        g = F[-1] @ params.weights[l - 1]
        f = evaluate(act, g) if l < L else g
        G.append(f if l == L else g)  # G_L coincides with the linear output
        F.append(f)
    return ForwardTrace(data=data, act=act, G=tuple(G), F=tuple(F))


def loss_of(trace: ForwardTrace) -> float:
    """Square loss of an already-computed trace."""
    r = trace.residual()
    return 0.5 * float(np.vdot(r, r))


def loss(params: Params, data: Dataset, act: ActivationParams) -> float:
    """Square loss ``0.5 * ||f_L - y||_2^2``."""
    return loss_of(forward(params, data, act))


def vec(M) -> np.ndarray:
    """Column-major flattening (columns concatenated)."""
    return np.asarray(M, dtype=np.float64).flatten(order="F")


def unvec(v, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`vec` for the given (rows, cols)."""
    arr = np.asarray(v, dtype=np.float64)
    return arr.reshape(shape, order="F")


def theta_distance(a: Params, b: Params) -> float:
    """Root of summed squared Frobenius norms of the per-layer differences."""
    if a.widths != b.widths or a.d != b.d:
        raise ValueError("parameter tuples have different architectures")
    total = 0.0
    for wa, wb in zip(a.weights, b.weights):
        delta = wa - wb
        total += float(np.vdot(delta, delta))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# Dataset / parameter serialization
# ---------------------------------------------------------------------------


def _write_matrix_csv(M: np.ndarray, path, prefix: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"{prefix}{j}" for j in range(M.shape[1])])
        for row in M:
            writer.writerow([format(v, _FLOAT_FMT) for v in row])


def _read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    M = np.asarray(rows, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != len(header):
        raise ValueError(f"malformed matrix CSV: {path}")
    return M


def dataset_to_csv(data: Dataset, x_path, y_path) -> None:
    """Write X and Y to separate CSV files with header rows."""
    _write_matrix_csv(data.X, x_path, "x")
    _write_matrix_csv(data.Y, y_path, "y")


def dataset_from_csv(x_path, y_path) -> Dataset:
    return Dataset(X=_read_matrix_csv(x_path), Y=_read_matrix_csv(y_path))


def dataset_to_json(data: Dataset, path) -> None:
    """Single-file bundle: inputs, targets, and their dimensions."""
    payload = {
        "X": data.X.tolist(),
        "Y": data.Y.tolist(),
        "shape": {"N": data.n_samples, "d": data.d, "n_out": data.n_out},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def dataset_from_json(path) -> Dataset:
    with open(path) as fh:
        payload = json.load(fh)
    data = Dataset(X=np.asarray(payload["X"]), Y=np.asarray(payload["Y"]))
    want = payload.get("shape")
    if want is not None:
        got = {"N": data.n_samples, "d": data.d, "n_out": data.n_out}
        if got != want:
            raise ValueError(f"bundle shape {want} does not match arrays {got}")
    return data


def params_to_json(params: Params, path) -> None:
    payload = {"weights": [w.tolist() for w in params.weights]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def params_from_json(path) -> Params:
    with open(path) as fh:
        payload = json.load(fh)
    return Params(tuple(np.asarray(w) for w in payload["weights"]))
