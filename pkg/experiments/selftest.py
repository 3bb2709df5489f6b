"""
Fast oracle checks that run without pytest (`python main.py selftest`).

Covers operator orthonormality, BCJR against brute-force enumeration, the
closed-form MAP threshold, the noise-split covariance and the genie
contraction of the uniform-prior EM.
"""

import itertools
import logging
import sys
import time
from typing import Callable, List, Tuple

import numpy as np
from scipy.special import logsumexp

from config.schemas import CodeConfig, EstimatorConfig, FrameConfig, WaveletBasis
from models.em import bg_threshold, map_threshold, spike_posterior, split_noise
from models.receivers import em_wav_run
from tools.channels import gen_sparse_wavelet_channel
from tools.phy import apply_channel, build_frame, conv_encode, noise_variance
from tools.siso import bcjr_decode
from tools.transforms import build_operator

logger = logging.getLogger(__name__)

CheckResult = Tuple[bool, str]


def print_header(text: str):
    """Print a formatted header."""
    print("\n" + "=" * 60)
    print(f"  {text}")
    print("=" * 60)


def print_status(check: str, status: str, message: str):
    """Print a status line."""
    icon = "✅" if status == "OK" else "❌" if status == "FAIL" else "⚠️"
    print(f"{icon} {check:24s} [{status:^6s}] {message}")


# ============================================================
# Oracles
# ============================================================

def brute_force_posteriors(llrs: np.ndarray, code: CodeConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Exact (info_p1, coded_p1) by enumerating every terminated codeword."""
    llrs = np.asarray(llrs, dtype=float)
    K = llrs.size // 2 - code.memory
    infos = np.array(list(itertools.product([0, 1], repeat=K)), dtype=np.uint8).reshape(-1, K)
    codewords = np.array([conv_encode(u, code) for u in infos])
    weights = 0.5 * ((2.0 * codewords - 1.0) @ llrs)

    total = logsumexp(weights)
    info_p1 = np.array([
        np.exp(logsumexp(weights[infos[:, i] == 1]) - total) for i in range(K)
    ])
    coded_p1 = np.array([
        np.exp(logsumexp(weights[codewords[:, j] == 1]) - total) if codewords[:, j].any() else 0.0
        for j in range(codewords.shape[1])
    ])
    return info_p1, coded_p1


def direct_spike_decision(g_tilde: np.ndarray, alpha2: float, lam: float, tau2: float) -> np.ndarray:
    """beta = 0 where the weighted spike density wins, compared as log densities."""
    mag2 = np.abs(g_tilde) ** 2
    spike = np.log(lam) - mag2 / alpha2 - np.log(np.pi * alpha2)
    slab = np.log(1 - lam) - mag2 / (alpha2 + tau2) - np.log(np.pi * (alpha2 + tau2))
    return (spike < slab).astype(np.uint8)


# ============================================================
# Checks
# ============================================================

def check_operator() -> CheckResult:
    worst = 0.0
    for N, L, J in [(32, 24, 3), (128, 96, 4)]:
        op = build_operator(3 * N, WaveletBasis(filter_order=8, levels=J, length=L))
        worst = max(
            worst,
            np.abs(op.full.conj().T @ op.full - np.eye(L)).max(),
            np.abs(op.W.T @ op.W - np.eye(L)).max(),
        )
    return worst < 1e-10, f"max deviation {worst:.2e}"


def check_bcjr(instances: int = 200, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    code = CodeConfig()
    worst = 0.0
    for _ in range(instances):
        K = int(rng.integers(1, 13))
        llrs = rng.normal(0.0, 3.0, size=2 * (K + code.memory))
        post = bcjr_decode(llrs, code)
        info_ref, coded_ref = brute_force_posteriors(llrs, code)
        worst = max(worst, np.abs(post.info_p1 - info_ref).max(), np.abs(post.p1 - coded_ref).max())
    return worst < 1e-9, f"{instances} instances, max |diff| {worst:.2e}"


def check_threshold(samples: int = 20000, seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    disagreements = 0
    for _ in range(samples // 100):
        alpha2 = rng.uniform(0.01, 2.0)
        tau2 = rng.uniform(0.01, 5.0)
        lam = rng.uniform(0.01, 0.99)
        g = (rng.normal(size=100) + 1j * rng.normal(size=100)) * np.sqrt((alpha2 + tau2) / 2)
        beta, _ = bg_threshold(g, alpha2, lam, tau2)
        margin = np.abs(g) ** 2 - map_threshold(alpha2, lam, tau2)
        clear = np.abs(margin) > 1e-12
        disagreements += int(np.count_nonzero((beta != direct_spike_decision(g, alpha2, lam, tau2))[clear]))
        disagreements += int(np.count_nonzero(((spike_posterior(g, alpha2, lam, tau2) >= 0.5) != (beta == 0))[clear]))
    return disagreements == 0, f"{samples} tuples, {disagreements} disagreements"


def check_noise_split(draws: int = 100_000, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    M, sigma2 = 4, 0.7
    worst = 0.0
    for rho in (0.25, 0.5, 0.9):
        S = np.exp(1j * np.pi / 4 * (2 * rng.integers(0, 4, size=(draws, M)) + 1))
        Z = split_noise(S, sigma2, rho, rng)
        cov = Z.T @ Z.conj() / draws
        worst = max(worst, np.abs(cov - sigma2 * np.eye(M)).max() / sigma2)
    return worst < 0.03, f"max relative deviation {worst:.3%}"


def check_genie_contraction(frames: int = 10, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    frame_cfg = FrameConfig(n_subcarriers=16, payload_bits=90, tfc=[1, 3, 2])
    code = CodeConfig()
    basis = WaveletBasis(filter_order=8, levels=3, length=24)
    op = build_operator(frame_cfg.M, basis)
    rho = 0.5
    est = EstimatorConfig(rho=rho, t_max=6)

    worst = 0.0
    for _ in range(frames):
        truth = gen_sparse_wavelet_channel(op, 6, rng)
        template, _ = build_frame(rng.integers(0, 2, frame_cfg.payload_bits), frame_cfg, code)
        frame = apply_channel(template, truth.H_freq, noise_variance(4.0, channel_gain=1 / frame_cfg.M), rng)
        run = em_wav_run(frame, op, code, est, frame_cfg.interleaver_seed, genie_symbols=frame.S)

        g_star = op.adjoint(np.mean(np.conj(frame.S) * frame.Y, axis=0))
        errors = np.array([np.linalg.norm(g - g_star) for g in run.g_history])
        expected = errors[0] * (1 - rho) ** np.arange(errors.size)
        worst = max(worst, np.abs(errors - expected).max())
    return worst < 1e-9, f"{frames} frames, max deviation {worst:.2e}"


CHECKS: List[Tuple[str, Callable[[], CheckResult]]] = [
    ("operator orthonormality", check_operator),
    ("bcjr vs brute force", check_bcjr),
    ("map threshold", check_threshold),
    ("noise split", check_noise_split),
    ("genie contraction", check_genie_contraction),
]


def run_selftest() -> bool:
    """Run every check and print a report; True when all pass."""
    print_header("🔍 Oracle self-test")
    print(f"Python: {sys.version.split()[0]}")

    passed = 0
    for name, check in CHECKS:
        start = time.time()
        try:
            ok, message = check()
        except Exception as e:
            logger.exception(f"Check {name} raised")
            ok, message = False, f"raised {type(e).__name__}: {e}"
        print_status(name, "OK" if ok else "FAIL", f"{message} ({time.time() - start:.2f}s)")
        passed += ok

    print_header(f"{'✅' if passed == len(CHECKS) else '❌'} {passed}/{len(CHECKS)} checks passed")
    return passed == len(CHECKS)
