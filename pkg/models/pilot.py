"""
Pilot-only channel estimators: per-subcarrier ML and the Wiener (MMSE) filter.
"""

import logging
from typing import Optional

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)


def pilot_hits(mask: np.ndarray) -> np.ndarray:
    """Number of pilot observations per stacked subcarrier."""
    return np.atleast_2d(mask).sum(axis=0)


def pilot_ml(Y: np.ndarray, S: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    H_k = mean over pilot hits of conj(S_k) Y_k.

    Args:
        Y: received samples, shape (triples, M) or (M,)
        S: transmitted symbols of the same shape, unit modulus at pilot positions
        mask: pilot positions; every entry is a pilot when omitted

    Raises:
        ValueError: shape mismatch or a subcarrier without any pilot
    """
    Y = np.atleast_2d(Y)
    S = np.atleast_2d(S)
    if Y.shape != S.shape:
        raise ValueError(f"Y {Y.shape} and S {S.shape} differ in shape")
    mask = np.ones(S.shape, dtype=bool) if mask is None else np.atleast_2d(mask)

    hits = pilot_hits(mask)
    if np.any(hits == 0):
        missing = np.flatnonzero(hits == 0)
        raise ValueError(f"{missing.size} subcarriers carry no pilot (first: {missing[0]})")

    return np.where(mask, np.conj(S) * Y, 0).sum(axis=0) / hits


def wiener_filter(R_h: np.ndarray, sigma2: float, hits: float = 1.0) -> np.ndarray:
    """
    R_h (R_h + sigma2/hits I)^-1, the linear MMSE smoother for H_ML.

    Raises:
        ValueError: R_h not Hermitian positive semidefinite
    """
    R_h = np.atleast_2d(np.asarray(R_h, dtype=complex))
    if R_h.shape[0] != R_h.shape[1]:
        raise ValueError(f"covariance must be square, got {R_h.shape}")
    if not np.allclose(R_h, R_h.conj().T, atol=1e-9):
        raise ValueError("covariance is not Hermitian")
    min_eig = linalg.eigvalsh(R_h)[0]
    if min_eig < -1e-9:
        raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {min_eig:.3e})")
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be nonnegative, got {sigma2}")

    A = R_h + (sigma2 / hits) * np.eye(R_h.shape[0])
    # R A^-1 = (A^-H R^H)^H = (A^-1 R)^H, both factors Hermitian
    return linalg.solve(A, R_h, assume_a="her").conj().T


def pilot_mmse(
    H_ml: np.ndarray,
    R_h: np.ndarray,
    sigma2: float,
    hits: float = 1.0
) -> np.ndarray:
    """H = R_h (R_h + sigma2/hits I)^-1 H_ML."""
    return wiener_filter(R_h, sigma2, hits) @ np.asarray(H_ml)
