"""
Soft-in soft-out receiver blocks.

LLRs follow the convention log P(c=1) - log P(c=0). The BCJR decoder runs in
the log domain over the zero-tail terminated trellis and returns a posteriori
probabilities for coded and information bits.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.special import logsumexp

from config.schemas import CodeConfig
from tools.phy import (
    QPSK_BITS,
    QPSK_CONSTELLATION,
    FrameLayout,
    FrameObservation,
    deinterleave,
    interleave,
)

logger = logging.getLogger(__name__)


class BitPosteriors(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    p1: np.ndarray
    info_p1: np.ndarray

    @property
    def hard_bits(self) -> np.ndarray:
        """Information bits decided at probability 1/2."""
        return (self.info_p1 > 0.5).astype(np.uint8)


class SymbolPosteriors(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mean: np.ndarray
    dist: Optional[np.ndarray] = None


# ============================================================
# Demapping
# ============================================================

def soft_demap(Y: np.ndarray, H_hat: np.ndarray, noise_var: float) -> np.ndarray:
    """
    Exact (log-sum-exp) QPSK demapper over all four hypotheses.

    Returns an array of shape Y.shape + (2,) holding (LLR(b0), LLR(b1)).
    """
    if not noise_var > 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    Y = np.asarray(Y)[..., None]
    H_hat = np.asarray(H_hat)[..., None]

    metrics = -np.abs(Y - H_hat * QPSK_CONSTELLATION) ** 2 / noise_var
    llrs = []
    for i in range(2):
        ones = QPSK_BITS[:, i] == 1
        llrs.append(
            logsumexp(metrics[..., ones], axis=-1) - logsumexp(metrics[..., ~ones], axis=-1)
        )
    return np.stack(llrs, axis=-1)


def gray_llrs(Y: np.ndarray, H_hat: np.ndarray, noise_var: float) -> np.ndarray:
    """Closed-form Gray QPSK LLRs; identical to soft_demap since the axes separate."""
    if not noise_var > 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    z = np.conj(H_hat) * Y
    scale = -2.0 * np.sqrt(2.0) / noise_var
    return np.stack([scale * z.real, scale * z.imag], axis=-1)


# ============================================================
# Trellis and BCJR
# ============================================================

def _parity(x: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros_like(x)
    for bit in range(width):
        out ^= (x >> bit) & 1
    return out


class Trellis:
    """
    State transitions of a feedforward rate-1/2 code.

    The register is r = (u << m) | s with the current input u in the MSB,
    outputs are parity(r & g) and the next state is r >> 1.
    """

    def __init__(self, code: CodeConfig):
        self.memory = code.memory
        self.n_states = code.n_states
        S, m = self.n_states, self.memory

        states = np.arange(S)[:, None]
        inputs = np.arange(2)[None, :]
        registers = (inputs << m) | states

        self.next_state = registers >> 1
        self.outputs = np.stack(
            [_parity(registers & g, code.constraint_length) for g in code.generators], axis=-1
        ).astype(np.uint8)

        # Every state has two predecessors, both driven by the input held in its MSB
        ns = np.arange(S)
        self.prev_input = ns >> (m - 1)
        base = (ns << 1) & (S - 1)
        self.prev_state = np.stack([base, base | 1], axis=1)

    def __repr__(self) -> str:
        return f"Trellis(states={self.n_states}, memory={self.memory})"


def bcjr_decode(llrs: np.ndarray, code: CodeConfig, trellis: Optional[Trellis] = None) -> BitPosteriors:
    """
    Log-domain BCJR over the terminated trellis.

    Args:
        llrs: coded-bit LLRs in transmission order, 2 per trellis step
        code: code description
        trellis: precomputed trellis for `code`

    Returns:
        BitPosteriors with p1 per coded bit and info_p1 per information bit
    """
    llrs = np.asarray(llrs, dtype=float).ravel()
    if llrs.size % 2 != 0:
        raise ValueError(f"LLR count must be even, got {llrs.size}")
    trellis = trellis or Trellis(code)
    m, S = trellis.memory, trellis.n_states
    T = llrs.size // 2
    if T < m:
        raise ValueError(f"{T} trellis steps cannot hold a {m}-bit tail")
    K = T - m

    # gamma[t, s, u] = sum_j (2c_j - 1) * llr_j / 2
    signs = 2.0 * trellis.outputs.astype(float) - 1.0
    gamma = 0.5 * np.einsum("suj,tj->tsu", signs, llrs.reshape(T, 2))
    gamma[K:, :, 1] = -np.inf

    alpha = np.full((T + 1, S), -np.inf)
    beta = np.full((T + 1, S), -np.inf)
    alpha[0, 0] = 0.0
    beta[T, 0] = 0.0

    ps, pu = trellis.prev_state, trellis.prev_input
    for t in range(T):
        a = np.logaddexp(
            alpha[t, ps[:, 0]] + gamma[t, ps[:, 0], pu],
            alpha[t, ps[:, 1]] + gamma[t, ps[:, 1], pu],
        )
        alpha[t + 1] = a - a.max()

    ns = trellis.next_state
    for t in range(T - 1, -1, -1):
        b = np.logaddexp(
            gamma[t, :, 0] + beta[t + 1, ns[:, 0]],
            gamma[t, :, 1] + beta[t + 1, ns[:, 1]],
        )
        beta[t] = b - b.max()

    metric = alpha[:T, :, None] + gamma + beta[1:][:, ns]

    with np.errstate(divide="ignore", invalid="ignore"):
        per_input = logsumexp(metric, axis=1)
        info_p1 = np.exp(per_input[:K, 1] - np.logaddexp(per_input[:K, 0], per_input[:K, 1]))

        p1 = np.empty((T, 2))
        for j in range(2):
            mask = trellis.outputs[:, :, j] == 1
            l1 = logsumexp(np.where(mask, metric, -np.inf), axis=(1, 2))
            l0 = logsumexp(np.where(mask, -np.inf, metric), axis=(1, 2))
            p1[:, j] = np.exp(l1 - np.logaddexp(l0, l1))

    return BitPosteriors(p1=np.clip(p1.ravel(), 0.0, 1.0), info_p1=np.clip(info_p1, 0.0, 1.0))


# ============================================================
# Symbol posteriors and the frame decode chain
# ============================================================

def symbol_posteriors(
    channel_p1: np.ndarray,
    frame: FrameObservation,
    keep_dist: bool = False
) -> SymbolPosteriors:
    """
    Per-slot symbol distribution p(s) = prod_i P(c_i = bit_i(s)) and its mean.

    channel_p1 holds bit posteriors in channel order, pad bits included. Pilot and
    pad slots get a point mass on the symbol they are known to carry.
    """
    layout = frame.layout
    channel_p1 = np.asarray(channel_p1, dtype=float).ravel()
    if channel_p1.size != 2 * layout.n_data_slots:
        raise ValueError(
            f"expected {2 * layout.n_data_slots} channel-order posteriors, got {channel_p1.size}"
        )

    p = channel_p1.reshape(-1, 2)
    # (slots, 4) table over constellation index 2*b0 + b1
    slot_dist = np.where(QPSK_BITS[None, :, 0] == 1, p[:, :1], 1.0 - p[:, :1]) * \
        np.where(QPSK_BITS[None, :, 1] == 1, p[:, 1:], 1.0 - p[:, 1:])

    dist = np.zeros(frame.S.shape + (4,))
    dist[layout.data_rows, layout.data_cols] = slot_dist

    known = frame.known_mask
    known_idx = np.argmin(np.abs(frame.S[known][:, None] - QPSK_CONSTELLATION[None, :]), axis=1)
    dist[known] = np.eye(4)[known_idx]

    mean = dist @ QPSK_CONSTELLATION
    return SymbolPosteriors(mean=mean, dist=dist if keep_dist else None)


def data_llrs(frame: FrameObservation, H_hat: np.ndarray, noise_var: Optional[float] = None) -> np.ndarray:
    """Channel-order LLRs of the coded bits, pad slots removed."""
    if frame.Y is None:
        raise ValueError("frame has no received samples")
    layout = frame.layout
    noise_var = frame.sigma2 if noise_var is None else noise_var
    rows, cols = layout.data_rows, layout.data_cols
    llrs = gray_llrs(frame.Y[rows, cols], np.asarray(H_hat)[cols], noise_var).ravel()
    return llrs[: layout.n_coded_bits]


def decode_frame(
    frame: FrameObservation,
    H_hat: np.ndarray,
    code: CodeConfig,
    interleaver_seed: int,
    trellis: Optional[Trellis] = None,
    noise_var: Optional[float] = None
) -> BitPosteriors:
    """Demap, deinterleave and BCJR-decode one frame under channel estimate H_hat."""
    llrs = data_llrs(frame, H_hat, noise_var)
    return bcjr_decode(deinterleave(llrs, interleaver_seed), code, trellis)


def channel_order_posteriors(bits: BitPosteriors, layout: FrameLayout, interleaver_seed: int) -> np.ndarray:
    """Re-interleave coded-bit posteriors and append the (known zero) pad bits."""
    return np.concatenate([
        interleave(bits.p1, interleaver_seed),
        np.zeros(layout.n_pad_bits),
    ])
