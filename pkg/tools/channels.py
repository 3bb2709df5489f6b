"""
Ground-truth channel generators and the CIR text file format.

Every realization is normalized to unit energy and carried in three views:
wavelet coefficients g, time taps h = W^H g and stacked response H = T g.

File format: one "re im" pair per line, '#' starts a comment.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from config.schemas import ChannelConfig
from tools.phy import complex_normal
from tools.transforms import LinearOperator

logger = logging.getLogger(__name__)

ModelTag = Literal["sparse-wavelet", "exponential-pdp", "file"]


class ChannelFileError(ValueError):
    """CIR file could not be parsed or does not describe a usable channel."""


class ChannelRealization(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    g_true: np.ndarray
    h_time: np.ndarray
    H_freq: np.ndarray
    model_tag: ModelTag


def _from_taps(h: np.ndarray, operator: LinearOperator, tag: ModelTag) -> ChannelRealization:
    energy = float(np.sum(np.abs(h) ** 2))
    if energy <= 0.0:
        raise ValueError("channel has zero energy")
    h = h / np.sqrt(energy)
    return ChannelRealization(
        g_true=operator.W @ h,
        h_time=h,
        H_freq=operator.F @ h,
        model_tag=tag,
    )


def gen_sparse_wavelet_channel(
    operator: LinearOperator,
    k_nonzero: int,
    rng: np.random.Generator
) -> ChannelRealization:
    """
    Sparse channel in the wavelet domain.

    k_nonzero uniformly chosen coefficients get i.i.d. CN(0, 1) values, the rest
    are zero; the vector is then scaled to unit norm.
    """
    L = operator.n_cols
    if not 1 <= k_nonzero <= L:
        raise ValueError(f"k_nonzero must be in [1, {L}], got {k_nonzero}")

    g = np.zeros(L, dtype=complex)
    support = rng.choice(L, size=k_nonzero, replace=False)
    g[support] = complex_normal(rng, k_nonzero, 1.0)
    g /= np.linalg.norm(g)

    return ChannelRealization(
        g_true=g,
        h_time=operator.W.T @ g,
        H_freq=operator.full @ g,
        model_tag="sparse-wavelet",
    )


def gen_exponential_channel(
    operator: LinearOperator,
    decay: float,
    rng: np.random.Generator,
    los_factor: float = 1.0
) -> ChannelRealization:
    """
    Non-sparse LOS stand-in: h_l = eps_l * exp(-l / (2 * decay)), first tap
    scaled by los_factor, unit energy.
    """
    if not decay > 0:
        raise ValueError(f"decay must be positive, got {decay}")
    L = operator.n_cols

    profile = np.exp(-np.arange(L) / (2.0 * decay))
    h = complex_normal(rng, L, 1.0) * profile
    h[0] *= los_factor
    return _from_taps(h, operator, "exponential-pdp")


def load_cir_file(path: Union[str, Path], operator: LinearOperator) -> ChannelRealization:
    """
    Read a CIR text file, zero-pad to L taps and normalize.

    Raises:
        ChannelFileError: unparsable content, empty file, more than L taps,
            zero energy
        OSError: the file cannot be opened
    """
    path = Path(path)
    lines = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ChannelFileError(f"{path}:{lineno}: expected 're im', got {raw.strip()!r}")
        try:
            lines.append(complex(float(parts[0]), float(parts[1])))
        except ValueError as e:
            raise ChannelFileError(f"{path}:{lineno}: {e}") from e

    if not lines:
        raise ChannelFileError(f"{path}: no taps found")
    L = operator.n_cols
    if len(lines) > L:
        raise ChannelFileError(f"{path}: {len(lines)} taps exceed L={L}")

    h = np.zeros(L, dtype=complex)
    h[: len(lines)] = lines
    try:
        realization = _from_taps(h, operator, "file")
    except ValueError as e:
        raise ChannelFileError(f"{path}: {e}") from e

    logger.info(f"📂 Loaded {len(lines)} taps from {path}")
    return realization


def save_cir_file(path: Union[str, Path], h_time: np.ndarray, comment: Optional[str] = None) -> Path:
    """Write taps in the format load_cir_file reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = np.asarray(h_time, dtype=complex).ravel()

    body = [f"# {comment}"] if comment else []
    body.append("# re im")
    body.extend(f"{tap.real:.17g} {tap.imag:.17g}" for tap in h)
    path.write_text("\n".join(body) + "\n")
    return path


def draw_channel(
    cfg: ChannelConfig,
    operator: LinearOperator,
    rng: np.random.Generator,
    file_channel: Optional[ChannelRealization] = None
) -> ChannelRealization:
    """One realization of the configured model. The file model is deterministic."""
    if cfg.model == "sparse-wavelet":
        return gen_sparse_wavelet_channel(operator, cfg.k_nonzero, rng)
    if cfg.model == "exponential-pdp":
        return gen_exponential_channel(operator, cfg.decay, rng, cfg.los_factor)
    if file_channel is None:
        file_channel = load_cir_file(cfg.cir_path, operator)
    return file_channel


def sample_channel_covariance(
    cfg: ChannelConfig,
    operator: LinearOperator,
    draws: int,
    rng: np.random.Generator,
    file_channel: Optional[ChannelRealization] = None,
    batch: int = 1000
) -> np.ndarray:
    """
    Sample covariance E[H H^H] of the stacked response over `draws` channels.
    Every model here is zero mean (the file model is a single fixed response).
    """
    if draws < 1:
        raise ValueError("draws must be positive")

    M = operator.n_rows
    R = np.zeros((M, M), dtype=complex)
    done = 0
    while done < draws:
        n = min(batch, draws - done)
        H = np.stack([draw_channel(cfg, operator, rng, file_channel).H_freq for _ in range(n)])
        R += H.T @ H.conj()
        done += n

    R /= draws
    logger.debug(f"Channel covariance from {draws} draws, trace={np.trace(R).real:.4f}")
    return 0.5 * (R + R.conj().T)


def channel_stats(realization: ChannelRealization, energy_fraction: float = 0.99) -> Dict[str, Any]:
    """Summary used by `channels inspect`."""
    power = np.abs(realization.h_time) ** 2
    energy = float(power.sum())
    delays = np.arange(power.size)
    mean_delay = float((delays * power).sum() / energy)
    rms = float(np.sqrt(((delays - mean_delay) ** 2 * power).sum() / energy))

    coeff_power = np.sort(np.abs(realization.g_true) ** 2)[::-1]
    cumulative = np.cumsum(coeff_power) / coeff_power.sum()
    n_coeffs = int(np.searchsorted(cumulative, energy_fraction - 1e-12) + 1)

    return {
        "model": realization.model_tag,
        "taps": int(np.count_nonzero(power > 1e-15 * power.max())),
        "energy": energy,
        "mean_delay": mean_delay,
        "rms_delay_spread": rms,
        f"coefficients_{int(round(energy_fraction * 100))}pct": n_coeffs,
    }
