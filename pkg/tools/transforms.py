"""
Orthonormal wavelet and truncated Fourier operators.

T = F_{M,L} W^H maps the L wavelet coefficients of a channel impulse response
to its stacked M-point frequency response over the three subbands. Operators
are materialized as explicit matrices; at M of a few hundred this is cheaper
to reason about than fast transforms and keeps every identity checkable.
"""

import logging
from typing import Iterable, Tuple

import numpy as np
import pywt
from pydantic import BaseModel, ConfigDict

from config.schemas import WaveletBasis

logger = logging.getLogger(__name__)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class LinearOperator(BaseModel):
    """T restricted to an ordered set of active columns."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    full: np.ndarray
    W: np.ndarray
    F: np.ndarray
    active_cols: np.ndarray
    matrix: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.full.shape[0]

    @property
    def n_cols(self) -> int:
        return self.full.shape[1]

    @property
    def n_active(self) -> int:
        return int(self.active_cols.size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """T_active x for a reduced coefficient vector."""
        x = np.asarray(x)
        if x.shape[0] != self.n_active:
            raise ValueError(f"expected {self.n_active} coefficients, got {x.shape[0]}")
        return self.matrix @ x

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """T_active^H y."""
        y = np.asarray(y)
        if y.shape[0] != self.n_rows:
            raise ValueError(f"expected {self.n_rows} rows, got {y.shape[0]}")
        return self.matrix.conj().T @ y


def _filter_pair(basis: WaveletBasis) -> Tuple[np.ndarray, np.ndarray]:
    """Low-pass taps from PyWavelets, high-pass by alternating flip."""
    try:
        wavelet = pywt.Wavelet(basis.pywt_name)
    except ValueError as e:
        raise ValueError(
            f"unsupported wavelet: {basis.family} order {basis.filter_order}"
        ) from e
    if not wavelet.orthogonal:
        raise ValueError(f"wavelet {basis.pywt_name} is not orthogonal")

    h = np.asarray(wavelet.dec_lo, dtype=float)
    g = ((-1.0) ** np.arange(h.size)) * h[::-1]
    return h, g


def _analysis_level(n: int, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """One periodized two-channel analysis step on a length-n signal."""
    half = n // 2
    cols = (2 * np.arange(half)[:, None] + np.arange(h.size)[None, :]) % n
    rows = np.broadcast_to(np.arange(half)[:, None], cols.shape)

    A = np.zeros((n, n))
    # Filters longer than n wrap several times; add.at accumulates the aliases
    np.add.at(A, (rows, cols), np.broadcast_to(h, cols.shape))
    np.add.at(A, (rows + half, cols), np.broadcast_to(g, cols.shape))
    return A


def build_wavelet_matrix(L: int, basis: WaveletBasis) -> np.ndarray:
    """
    L x L orthonormal matrix of the J-level periodized wavelet decomposition.

    Output coefficient order follows pywt.wavedec: [cA_J, cD_J, ..., cD_1].

    Raises:
        ValueError: L not divisible by 2^J, or unsupported family/order
    """
    J = basis.levels
    if L % (2 ** J) != 0:
        raise ValueError(f"L={L} is not divisible by 2^{J}")
    h, g = _filter_pair(basis)

    W = np.eye(L)
    n = L
    for _ in range(J):
        step = np.eye(L)
        step[:n, :n] = _analysis_level(n, h, g)
        W = step @ W
        n //= 2

    logger.debug(f"Built {basis.pywt_name} wavelet matrix: L={L}, J={J}")
    return W


def build_truncated_fourier(M: int, L: int) -> np.ndarray:
    """First L columns of the unitary M-point DFT matrix."""
    if L < 1 or M < 1:
        raise ValueError("M and L must be positive")
    if L > M:
        raise ValueError(f"cannot keep L={L} columns of an M={M} point DFT")
    m = np.arange(M)[:, None]
    l = np.arange(L)[None, :]
    return np.exp(-2j * np.pi * m * l / M) / np.sqrt(M)


def compose_operator(F: np.ndarray, W: np.ndarray) -> LinearOperator:
    """T = F W^H with every column active."""
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"W must be square, got {W.shape}")
    if F.ndim != 2 or F.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: F {F.shape} vs W {W.shape}")

    full = F @ W.conj().T
    return LinearOperator(
        full=_readonly(full),
        W=_readonly(W),
        F=_readonly(F),
        active_cols=_readonly(np.arange(W.shape[0])),
        matrix=_readonly(full),
    )


def build_operator(M: int, basis: WaveletBasis) -> LinearOperator:
    """Session operator for an M-row stacked response and the given basis."""
    L = basis.length
    return compose_operator(build_truncated_fourier(M, L), build_wavelet_matrix(L, basis))


def restrict_columns(op: LinearOperator, keep: Iterable[int]) -> LinearOperator:
    """
    Keep only the columns of T listed in `keep` (indexes into 0..L-1).

    Raises:
        ValueError: empty keep set or indexes outside the active set
    """
    keep = np.unique(np.asarray(list(keep), dtype=int))
    if keep.size == 0:
        raise ValueError("cannot restrict an operator to an empty column set")
    if not np.isin(keep, op.active_cols).all():
        outside = np.setdiff1d(keep, op.active_cols)
        raise ValueError(f"columns {outside.tolist()} are not active")

    return op.model_copy(
        update={"active_cols": _readonly(keep), "matrix": _readonly(op.full[:, keep])}
    )
