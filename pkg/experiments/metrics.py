"""Per-frame error metrics."""

import numpy as np


def compute_mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Total squared error ||estimate - truth||^2."""
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    if estimate.shape != truth.shape:
        raise ValueError(f"length mismatch: {estimate.shape} vs {truth.shape}")
    return float(np.sum(np.abs(estimate - truth) ** 2))


def count_bit_errors(decoded: np.ndarray, payload: np.ndarray) -> int:
    decoded = np.asarray(decoded).ravel()
    payload = np.asarray(payload).ravel()
    if decoded.shape != payload.shape:
        raise ValueError(f"length mismatch: {decoded.size} vs {payload.size} bits")
    return int(np.count_nonzero(decoded != payload))


def compute_ber(decoded: np.ndarray, payload: np.ndarray) -> float:
    """Hamming distance over length; an empty payload has no errors."""
    errors = count_bit_errors(decoded, payload)
    n = np.asarray(payload).size
    return errors / n if n else 0.0
