"""Dense numeric kernel: normalization, stable reductions, seeded RNG,
and the finite-difference gradient oracle.

All kernels operate on C-contiguous float64 numpy arrays (row-major).
Embedding matrices are laid out instance-major, then language, so every
reduction has a fixed, platform-independent order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .errors import EmptyInput, NonFiniteEvaluation, ZeroRow

ZERO_ROW_THRESHOLD = 1e-30
DEFAULT_FD_STEP = 1e-6


class Rng:
    """Seeded PCG64 stream; identical seed gives an identical stream everywhere.

    `spawn(*key)` derives an independent child stream from (seed, key), so
    parallel sweeps get scheduling-independent randomness.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, _sequence: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._sequence = _sequence or np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._sequence))

    def spawn(self, *key: int) -> "Rng":
        child = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(key))
        return Rng(self.seed, _sequence=child)

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


def check_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate a 2-D float64 array with finite entries; returns it C-contiguous."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise EmptyInput(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteEvaluation(f"{name} contains non-finite entries")
    return a


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.linalg.norm(m, axis=-1)


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm, preserving direction.

    Raises ZeroRow when any row norm is below 1e-30.
    """
    m = np.asarray(m, dtype=np.float64)
    norms = row_norms(m)
    if np.any(norms < ZERO_ROW_THRESHOLD):
        bad = int(np.argmax(norms < ZERO_ROW_THRESHOLD))
        raise ZeroRow(f"row {bad} has norm {norms.flat[bad]:.3e} < {ZERO_ROW_THRESHOLD:g}")
    return m / norms[..., None]


def log_sum_exp(v) -> float:
    """log(sum(exp(v))) with max-subtraction; safe for entries up to +/-700."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    m = np.max(v)
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise stable log-sum-exp for a 2-D array."""
    mx = np.max(m, axis=1, keepdims=True)
    return (mx + np.log(np.sum(np.exp(m - mx), axis=1, keepdims=True))).ravel()


def softmax_rows(m: np.ndarray) -> np.ndarray:
    mx = np.max(m, axis=1, keepdims=True)
    e = np.exp(m - mx)
    return e / np.sum(e, axis=1, keepdims=True)


def _thread_count() -> int:
    raw = os.environ.get("CCRK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def similarity(a: np.ndarray, b: np.ndarray, threads: int | None = None) -> np.ndarray:
    """Similarity product a @ b.T.

    With threads > 1 (or CCRK_THREADS set) the rows of `a` are processed in
    fixed contiguous chunks, so the result matches the serial product within
    1e-9 elementwise regardless of scheduling.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = threads if threads is not None else _thread_count()
    if n <= 1 or a.shape[0] < 2 * n:
        return a @ b.T
    chunks = np.array_split(np.arange(a.shape[0]), n)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(lambda rs=rs: np.dot(a[rs], b.T)) for rs in chunks]
        for rs, fut in zip(chunks, futures):
            out[rs] = fut.result()
    return out


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    This is the test oracle for every analytic gradient in the package; it
    must stay independent of the code paths it checks.
    """
    if h <= 0:
        raise EmptyInput("finite difference step must be positive")
    x = np.asarray(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"f non-finite at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |analytic - numeric| / max(1, |analytic|)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(1.0, np.abs(a))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
