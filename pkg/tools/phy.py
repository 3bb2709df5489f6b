"""
MB-OFDM transmit chain at frequency-domain equivalence.

Binary data -> convolutional encoder -> random bit interleaver -> QPSK mapping
-> pilot insertion and TFC subband hopping -> stacked three-subband triples
Y_m = D_{S_m} H + Z_m. The IFFT/CP stage is not simulated: with a cyclic
prefix longer than the channel and perfect synchronization each subcarrier is
a flat subchannel, which is exactly what the stacked model expresses.
"""

import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from config.schemas import CodeConfig, FrameConfig

logger = logging.getLogger(__name__)

# Gray-coded QPSK, index = 2*b0 + b1; b0 drives the real axis, b1 the imaginary one
QPSK_CONSTELLATION = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
QPSK_BITS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.uint8)

PILOT_SYMBOL = QPSK_CONSTELLATION[0]


def complex_normal(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    """Circular complex Gaussian samples with total variance `var`."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def noise_variance(
    ebn0_db: float,
    rate: float = 0.5,
    bits_per_symbol: int = 2,
    channel_gain: float = 1.0
) -> float:
    """
    Complex noise variance for a given Eb/N0.

    sigma2 = G / (B * R * Eb/N0), where G is the mean per-subcarrier channel
    power. For unit-energy channels seen through a unitary M-point DFT, G = 1/M.
    """
    return channel_gain / (bits_per_symbol * rate * 10.0 ** (ebn0_db / 10.0))


# ============================================================
# Convolutional code and interleaver
# ============================================================

def generator_taps(code: CodeConfig) -> np.ndarray:
    """(2, K) tap matrix; column d multiplies the input delayed by d."""
    K = code.constraint_length
    return np.array(
        [[(g >> (K - 1 - d)) & 1 for d in range(K)] for g in code.generators],
        dtype=np.uint8,
    )


def conv_encode(bits: np.ndarray, code: CodeConfig) -> np.ndarray:
    """
    Feedforward rate-1/2 encoding with zero-tail termination.

    Output pairs (o1, o2) are interleaved: o1[0], o2[0], o1[1], ...
    Length is 2 * (len(bits) + K - 1).
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    u = np.concatenate([bits, np.zeros(code.memory, dtype=np.uint8)])
    taps = generator_taps(code)

    coded = np.empty(2 * u.size, dtype=np.uint8)
    for j in range(2):
        coded[j::2] = np.convolve(u, taps[j])[: u.size] % 2
    return coded


# Pseudo-random sequence warm-up length and word size of the interleaver shuffle
GOLD_OFFSET = 1600
SHUFFLE_WORD_BITS = 32


def gold_sequence(c_init: int, length: int) -> np.ndarray:
    """
    Length-31 Gold sequence c(n) = x1(n + 1600) xor x2(n + 1600).

    x1 starts at 1, 0, ..., 0 with x1(k) = x1(k-28) ^ x1(k-31); x2 is loaded
    with the 31 bits of c_init (LSB first) and x2(k) = x2(k-28) ^ x2(k-29) ^
    x2(k-30) ^ x2(k-31).
    """
    if not 0 <= c_init < (1 << 31):
        raise ValueError(f"c_init must fit in 31 bits, got {c_init}")
    total = max(length + GOLD_OFFSET, 31)
    x1 = np.zeros(total, dtype=np.uint8)
    x2 = np.zeros(total, dtype=np.uint8)
    x1[0] = 1
    x2[:31] = (c_init >> np.arange(31)) & 1

    # the recursions reach back at least 28 samples, so 28 new samples can be filled at once
    for k in range(31, total, 28):
        b = min(28, total - k)
        x1[k:k + b] = x1[k - 28:k - 28 + b] ^ x1[k - 31:k - 31 + b]
        x2[k:k + b] = (
            x2[k - 28:k - 28 + b] ^ x2[k - 29:k - 29 + b] ^ x2[k - 30:k - 30 + b] ^ x2[k - 31:k - 31 + b]
        )
    return x1[GOLD_OFFSET:GOLD_OFFSET + length] ^ x2[GOLD_OFFSET:GOLD_OFFSET + length]


@lru_cache(maxsize=64)
def interleaver_permutation(length: int, seed: int) -> np.ndarray:
    """
    Random permutation as a deterministic function of (seed, length).

    Fisher-Yates shuffle whose draws are 32-bit words (LSB first) of the Gold
    sequence with c_init = seed mod 2^31: position i swaps with word mod (i + 1),
    for i = length-1 down to 1. Independent of the numpy generator version.
    """
    perm = np.arange(length)
    if length > 1:
        bits = gold_sequence(seed % (1 << 31), SHUFFLE_WORD_BITS * (length - 1))
        words = (bits.reshape(-1, SHUFFLE_WORD_BITS).astype(np.int64) << np.arange(SHUFFLE_WORD_BITS)).sum(axis=1)
        for t, i in enumerate(range(length - 1, 0, -1)):
            j = int(words[t] % (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
    perm.setflags(write=False)
    return perm


def interleave(seq: np.ndarray, seed: int) -> np.ndarray:
    seq = np.asarray(seq)
    return seq[interleaver_permutation(seq.shape[0], seed)]


def deinterleave(seq: np.ndarray, seed: int, length: Optional[int] = None) -> np.ndarray:
    seq = np.asarray(seq)
    if length is not None and seq.shape[0] != length:
        raise ValueError(f"deinterleave expected {length} entries, got {seq.shape[0]}")
    out = np.empty_like(seq)
    out[interleaver_permutation(seq.shape[0], seed)] = seq
    return out


def qpsk_map(bits: np.ndarray) -> np.ndarray:
    """Map bit pairs onto unit-energy Gray QPSK points."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1, 2)
    return QPSK_CONSTELLATION[2 * bits[:, 0] + bits[:, 1]]


# ============================================================
# Frame layout
# ============================================================

class FrameLayout(BaseModel):
    """Where every pilot, data and pad slot of a frame lives in the (m, k) grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n_triples: int
    n_pilot_triples: int
    n_coded_bits: int
    n_pad_bits: int
    data_rows: np.ndarray
    data_cols: np.ndarray
    pilot_mask: np.ndarray
    pad_mask: np.ndarray

    @property
    def n_data_slots(self) -> int:
        return int(self.data_rows.size)

    @property
    def known_mask(self) -> np.ndarray:
        return self.pilot_mask | self.pad_mask


@lru_cache(maxsize=16)
def _cached_layout(cfg_json: str, memory: int) -> FrameLayout:
    cfg = FrameConfig.model_validate_json(cfg_json)
    N, M = cfg.n_subcarriers, cfg.M
    tfc = np.asarray(cfg.tfc)

    n_coded = cfg.bits_per_symbol * (cfg.payload_bits + memory)
    n_symbols = n_coded // cfg.bits_per_symbol
    n_data_triples = -(-n_symbols // M)
    n_pilot_triples = cfg.pilot_symbols // 3
    n_triples = n_pilot_triples + n_data_triples

    def slot_positions(j: np.ndarray, n: np.ndarray):
        # OFDM symbol j hops to subband tfc[j mod len]; three consecutive symbols form a triple
        return j // 3, (tfc[j % tfc.size] - 1) * N + n

    pilot_mask = np.zeros((n_triples, M), dtype=bool)
    j = np.repeat(np.arange(cfg.pilot_symbols), N)
    n = np.tile(np.arange(N), cfg.pilot_symbols)
    rows, cols = slot_positions(j, n)
    pilot_mask[rows, cols] = True

    q = np.arange(n_data_triples * M)
    data_rows, data_cols = slot_positions(cfg.pilot_symbols + q // N, q % N)

    pad_mask = np.zeros((n_triples, M), dtype=bool)
    pad_mask[data_rows[n_symbols:], data_cols[n_symbols:]] = True

    for a in (data_rows, data_cols, pilot_mask, pad_mask):
        a.setflags(write=False)

    return FrameLayout(
        n_triples=n_triples,
        n_pilot_triples=n_pilot_triples,
        n_coded_bits=n_coded,
        n_pad_bits=cfg.bits_per_symbol * (q.size - n_symbols),
        data_rows=data_rows,
        data_cols=data_cols,
        pilot_mask=pilot_mask,
        pad_mask=pad_mask,
    )


def frame_layout(cfg: FrameConfig, code: CodeConfig) -> FrameLayout:
    return _cached_layout(cfg.model_dump_json(), code.memory)


class FrameObservation(BaseModel):
    """Transmitted and received stacked symbol grids of one frame, shape (n_triples, M)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    S: np.ndarray
    Y: Optional[np.ndarray] = None
    sigma2: float = 0.0
    layout: FrameLayout

    @property
    def n_triples(self) -> int:
        return self.S.shape[0]

    @property
    def M(self) -> int:
        return self.S.shape[1]

    @property
    def pilot_mask(self) -> np.ndarray:
        return self.layout.pilot_mask

    @property
    def known_mask(self) -> np.ndarray:
        return self.layout.known_mask


class FrameRecord(BaseModel):
    """Ground-truth bits behind a frame."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    payload: np.ndarray
    coded: np.ndarray
    channel_bits: np.ndarray


def build_frame(
    payload: np.ndarray,
    cfg: FrameConfig,
    code: CodeConfig
) -> Tuple[FrameObservation, FrameRecord]:
    """
    Encode, interleave, map and lay out one frame.

    Pilots fill the first `pilot_symbols` OFDM symbols with PILOT_SYMBOL;
    interleaved coded bits follow, zero-padded to whole triples.

    Raises:
        ValueError: payload length differs from cfg.payload_bits
    """
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    if payload.size != cfg.payload_bits:
        raise ValueError(f"payload has {payload.size} bits, frame expects {cfg.payload_bits}")

    layout = frame_layout(cfg, code)
    coded = conv_encode(payload, code)
    channel_bits = np.concatenate([
        interleave(coded, cfg.interleaver_seed),
        np.zeros(layout.n_pad_bits, dtype=np.uint8),
    ])

    S = np.zeros((layout.n_triples, cfg.M), dtype=complex)
    S[layout.pilot_mask] = PILOT_SYMBOL
    S[layout.data_rows, layout.data_cols] = qpsk_map(channel_bits)

    frame = FrameObservation(S=S, layout=layout)
    record = FrameRecord(payload=payload, coded=coded, channel_bits=channel_bits)
    return frame, record


def apply_channel(
    frame: FrameObservation,
    H: np.ndarray,
    sigma2: float,
    rng: np.random.Generator
) -> FrameObservation:
    """
    Y = D_S H + Z with Z circular Gaussian of variance sigma2 per entry.
    The channel is constant over the frame.
    """
    H = np.asarray(H)
    if H.shape != (frame.M,):
        raise ValueError(f"channel response has shape {H.shape}, expected ({frame.M},)")
    if sigma2 <= 0:
        raise ValueError(f"noise variance must be positive, got {sigma2}")

    Y = frame.S * H[None, :] + complex_normal(rng, frame.S.shape, sigma2)
    return frame.model_copy(update={"Y": Y, "sigma2": float(sigma2)})


# ============================================================
# Frame fixtures
# ============================================================

FRAME_DTYPE = "<c8"


def save_frame(
    path,
    frame: FrameObservation,
    cfg: FrameConfig,
    code: CodeConfig,
    seeds: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write a frame as little-endian complex64 samples plus a JSON sidecar.

    `<stem>.c64` holds S followed by Y (when present) in row-major order;
    `<stem>.json` lists array names, shapes and offsets, sigma2, the frame and
    code configuration and any seeds the caller wants on record.

    Returns:
        path of the sidecar
    """
    path = Path(path)
    data_path = path.with_suffix(".c64")
    meta_path = path.with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays = [("S", frame.S)] + ([("Y", frame.Y)] if frame.Y is not None else [])
    entries, offset = [], 0
    with open(data_path, "wb") as fh:
        for name, arr in arrays:
            arr = np.ascontiguousarray(arr, dtype=FRAME_DTYPE)
            arr.tofile(fh)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size

    meta = {
        "dtype": FRAME_DTYPE,
        "data_file": data_path.name,
        "arrays": entries,
        "sigma2": frame.sigma2,
        "frame": cfg.model_dump(mode="json"),
        "code": code.model_dump(mode="json"),
        "seeds": seeds or {},
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    logger.info(f"💾 Saved frame fixture {data_path.name} ({offset} samples)")
    return meta_path


def load_frame(path) -> Tuple[FrameObservation, FrameConfig, CodeConfig, Dict[str, Any]]:
    """
    Read a frame written by save_frame. `path` may name either file of the pair.

    Raises:
        ValueError: sidecar and sample file disagree, or shapes do not match the layout
    """
    meta_path = Path(path).with_suffix(".json")
    meta = json.loads(meta_path.read_text())
    if meta.get("dtype") != FRAME_DTYPE:
        raise ValueError(f"unsupported sample dtype {meta.get('dtype')!r}")

    cfg = FrameConfig.model_validate(meta["frame"])
    code = CodeConfig.model_validate(meta["code"])
    layout = frame_layout(cfg, code)

    samples = np.fromfile(meta_path.with_name(meta["data_file"]), dtype=FRAME_DTYPE)
    expected = sum(int(np.prod(e["shape"])) for e in meta["arrays"])
    if samples.size != expected:
        raise ValueError(f"sample file holds {samples.size} values, sidecar describes {expected}")

    arrays = {}
    for e in meta["arrays"]:
        shape = tuple(e["shape"])
        if shape != (layout.n_triples, cfg.M):
            raise ValueError(f"{e['name']} has shape {shape}, layout expects ({layout.n_triples}, {cfg.M})")
        size = int(np.prod(shape))
        arrays[e["name"]] = samples[e["offset"]: e["offset"] + size].reshape(shape).astype(complex)

    frame = FrameObservation(
        S=arrays["S"], Y=arrays.get("Y"), sigma2=float(meta["sigma2"]), layout=layout
    )
    return frame, cfg, code, meta.get("seeds", {})
