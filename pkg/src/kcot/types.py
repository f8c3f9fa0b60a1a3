"""Validated containers shared by the matching modules.

Everything here is float64 and immutable after construction: arrays are
copied in and flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MARGINAL_ATOL = 1e-9
NORM_ATOL = 1e-6


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class FeatureSet:
    """M row vectors of dimension d (image regions, frozen or global features)."""

    rows: np.ndarray
    l2_normalized: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {rows.shape}")
        _check_finite(rows, type(self).__name__)
        if self.l2_normalized:
            norms = np.linalg.norm(rows, axis=1)
            if np.any(np.abs(norms - 1.0) > NORM_ATOL):
                raise ValueError("rows flagged l2_normalized do not have unit norm")
        object.__setattr__(self, "rows", _frozen(rows))

    @classmethod
    def normalized(cls, rows) -> "FeatureSet":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("cannot normalize a zero-norm row")
        return cls(rows / norms, l2_normalized=True)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


class LabelSet(FeatureSet):
    """N label embeddings; the text side of a matching."""


def label_vector(y) -> np.ndarray:
    """Return ``y`` as a read-only binary float vector."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size < 1:
        raise ValueError("label vector is empty")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("label vector must be binary")
    return _frozen(y)


def as_marginal(weights, size: int | None = None) -> np.ndarray:
    """Validate a probability vector and return it as a read-only array."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size < 1:
        raise ValueError("marginal is empty")
    if size is not None and w.size != size:
        raise ValueError(f"marginal has length {w.size}, expected {size}")
    _check_finite(w, "marginal")
    if np.any(w < 0):
        raise ValueError("marginal has negative entries")
    if abs(w.sum() - 1.0) > MARGINAL_ATOL:
        raise ValueError(f"marginal sums to {w.sum()!r}, expected 1")
    return _frozen(w)


def uniform_marginal(n: int) -> np.ndarray:
    return _frozen(np.full(n, 1.0 / n))


def as_cost(entries) -> np.ndarray:
    c = np.asarray(entries, dtype=np.float64)
    if c.ndim != 2 or 0 in c.shape:
        raise ValueError(f"cost must be a non-empty 2-D array, got shape {c.shape}")
    _check_finite(c, "cost matrix")
    return _frozen(c)


@dataclass(frozen=True)
class TransportPlan:
    """A nonnegative M x N coupling plus the marginals it was solved under.

    ``residual`` is the max-norm violation of both marginal constraints.
    Teacher plans are tagged with ``is_teacher``; their row/column sums are
    whatever the masking left and are stored as the marginals.
    """

    entries: np.ndarray
    row_marginal: np.ndarray = None
    col_marginal: np.ndarray = None
    residual: float = 0.0
    is_teacher: bool = False

    def __post_init__(self):
        p = np.asarray(self.entries, dtype=np.float64)
        if p.ndim != 2 or 0 in p.shape:
            raise ValueError(f"plan must be a non-empty 2-D array, got shape {p.shape}")
        _check_finite(p, "transport plan")
        if np.any(p < 0):
            raise ValueError("transport plan has negative entries")
        rows = p.sum(axis=1) if self.row_marginal is None else self.row_marginal
        cols = p.sum(axis=0) if self.col_marginal is None else self.col_marginal
        object.__setattr__(self, "entries", _frozen(p))
        object.__setattr__(self, "row_marginal", _frozen(rows))
        object.__setattr__(self, "col_marginal", _frozen(cols))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def marginal_residual(self) -> float:
        p = self.entries
        return float(max(np.abs(p.sum(axis=1) - self.row_marginal).max(),
                         np.abs(p.sum(axis=0) - self.col_marginal).max()))


@dataclass(frozen=True)
class SolverConfig:
    """Hyper-parameters for the KCOT solve and the losses.

    Defaults follow the reported training setup (entropy weight 0.1,
    knowledge weight 0.05, 100 Sinkhorn iterations); ``tau`` mirrors CLIP's
    learned temperature.
    """

    lambda1: float = 0.1
    lambda2: float = 0.05
    tau: float = 0.01
    tau_prime: float = 0.07
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0
    log_domain: bool = False

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ValueError("lambda1 must be > 0")
        if not self.lambda2 >= 0:
            raise ValueError("lambda2 must be >= 0")
        for name in ("tau", "tau_prime", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "max_iter", int(self.max_iter))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def lambda_tilde(self) -> float:
        return self.lambda1 + self.lambda2


def _rows(x) -> np.ndarray:
    if isinstance(x, FeatureSet):
        return x.rows
    return FeatureSet(x).rows


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``.

    Zero-norm rows raise instead of producing NaN.
    """
    a, b = _rows(a), _rows(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine similarity undefined for zero-norm rows")
    sims = (a / na[:, None]) @ (b / nb[:, None]).T
    return np.clip(sims, -1.0, 1.0)


def row_softmax(m, tau: float = 1.0) -> np.ndarray:
    """Softmax of each row of ``m / tau`` (max-subtracted)."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    m = np.asarray(m, dtype=np.float64)
    _check_finite(m, "softmax input")
    z = m / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def row_log_softmax(m, tau: float = 1.0) -> np.ndarray:
    if not tau > 0:
        raise ValueError("tau must be > 0")
    z = np.asarray(m, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
