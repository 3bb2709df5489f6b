"""
Building blocks of the wavelet-domain EM iterations.

The received noise is split as Z = D_S Z1 + Z2 with Z1 ~ CN(0, rho sigma2 I),
which introduces the hidden noisy channel H~ = T g + Z1. The E-step then
produces a pseudo-observation of g with noise variance alpha2 = rho sigma2
(divided by the number of averaged triples), and the M-step is a MAP
denoising of that observation under a Bernoulli-Gaussian prior.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from tools.phy import complex_normal
from tools.transforms import LinearOperator, restrict_columns

logger = logging.getLogger(__name__)


class AllPrunedError(RuntimeError):
    """Every remaining coefficient was classified as noise."""


class EmState(BaseModel):
    """Iterate of one EM run. `g` is indexed by `active` (positions in 0..length-1)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    g: np.ndarray
    active: np.ndarray
    length: int = Field(..., ge=1)
    lam: Optional[float] = Field(None, ge=0.0, le=1.0)
    tau2: Optional[float] = Field(None, ge=0.0)
    rho: float = Field(..., gt=0.0, le=1.0)
    alpha2: float = Field(..., ge=0.0)
    n_obs: int = Field(1, ge=1, description="Triples averaged by the E-step")
    t: int = Field(0, ge=0)
    t_max: int = Field(4, ge=1)

    @model_validator(mode="after")
    def check_shapes(self):
        if self.g.shape != self.active.shape:
            raise ValueError(f"g has shape {self.g.shape} but {self.active.size} indexes are active")
        return self

    @property
    def alpha2_eff(self) -> float:
        """Noise variance of the E-step pseudo-observation."""
        return self.alpha2 / self.n_obs

    def full(self) -> np.ndarray:
        """Length-L estimate with truncated coefficients as exact zeros."""
        out = np.zeros(self.length, dtype=complex)
        out[self.active] = self.g
        return out


class PriorState(BaseModel):
    """Indicator decisions of one thresholding pass and the statistics they imply."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    beta: np.ndarray
    lam: float
    tau2: float
    L_tilde: int
    eta: float

    @classmethod
    def from_decision(cls, beta: np.ndarray, g: np.ndarray, lam: float, tau2: float) -> "PriorState":
        beta = np.asarray(beta, dtype=np.uint8)
        return cls(
            beta=beta,
            lam=lam,
            tau2=tau2,
            L_tilde=int(np.count_nonzero(beta == 0)),
            eta=float(np.sum(np.abs(g[beta == 1]) ** 2)),
        )


def split_noise(
    S: np.ndarray,
    sigma2: float,
    rho: float,
    rng: np.random.Generator
) -> np.ndarray:
    """Draw Z = D_S Z1 + Z2 with Z1 ~ CN(0, rho sigma2), Z2 ~ CN(0, (1 - rho) sigma2)."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    S = np.asarray(S)
    Z1 = complex_normal(rng, S.shape, rho * sigma2)
    Z2 = complex_normal(rng, S.shape, (1.0 - rho) * sigma2)
    return S * Z1 + Z2


def matched_filter(Y: np.ndarray, S_bar: np.ndarray) -> np.ndarray:
    """mean over triples of conj(S_bar_m) * Y_m."""
    Y = np.atleast_2d(Y)
    S_bar = np.atleast_2d(S_bar)
    if Y.shape != S_bar.shape:
        raise ValueError(f"Y {Y.shape} and symbol means {S_bar.shape} differ in shape")
    return np.mean(np.conj(S_bar) * Y, axis=0)


# ============================================================
# Thresholding and hyperparameters
# ============================================================

def map_threshold(alpha2: float, lam: float, tau2: float) -> float:
    """
    |g~|^2 level at or below which a coefficient is declared zero.

    alpha2 (alpha2 + tau2) / tau2 * ln[lam (alpha2 + tau2) / ((1 - lam) alpha2)];
    +inf when lam = 1, negative (never zero) when the log argument is below 1.
    """
    if lam >= 1.0:
        return np.inf
    if lam <= 0.0:
        return -np.inf
    ratio = lam * (alpha2 + tau2) / ((1.0 - lam) * alpha2)
    return alpha2 * (alpha2 + tau2) / tau2 * np.log(ratio)


def spike_log_odds(g_tilde: np.ndarray, alpha2: float, lam: float, tau2: float) -> np.ndarray:
    """log p(beta=0 | g~) - log p(beta=1 | g~) under complex Gaussian densities."""
    mag2 = np.abs(g_tilde) ** 2
    slab = alpha2 + tau2
    with np.errstate(divide="ignore"):
        log_spike = np.log(lam) - np.log(np.pi * alpha2) - mag2 / alpha2
        log_slab = np.log1p(-lam) - np.log(np.pi * slab) - mag2 / slab
    return log_spike - log_slab


def spike_posterior(g_tilde: np.ndarray, alpha2: float, lam: float, tau2: float) -> np.ndarray:
    """p(beta_j = 0 | g~_j), the normalized spike probability."""
    return expit(spike_log_odds(g_tilde, alpha2, lam, tau2))


def bg_threshold(
    g_tilde: np.ndarray,
    alpha2: float,
    lam: float,
    tau2: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    MAP decision under the Bernoulli-Gaussian prior.

    beta_j = 0 iff p(beta_j = 0 | g~_j) >= 1/2; kept coefficients are shrunk by
    tau2 / (alpha2 + tau2).

    Returns:
        (beta as uint8, thresholded and shrunk coefficients)
    """
    if not alpha2 > 0:
        raise ValueError(f"alpha2 must be positive, got {alpha2}")
    if tau2 < 0 or not 0.0 <= lam <= 1.0:
        raise ValueError(f"invalid prior: lam={lam}, tau2={tau2}")
    g_tilde = np.asarray(g_tilde, dtype=complex)

    if tau2 == 0.0:
        logger.warning("⚠️  Degenerate prior (tau2 = 0): every coefficient set to zero")
        return np.zeros(g_tilde.shape, dtype=np.uint8), np.zeros_like(g_tilde)

    beta = (spike_log_odds(g_tilde, alpha2, lam, tau2) < 0).astype(np.uint8)
    g_new = np.where(beta == 1, tau2 / (alpha2 + tau2) * g_tilde, 0)
    return beta, g_new


def update_hyperparams(
    beta: np.ndarray,
    g_new: np.ndarray,
    L: Optional[int] = None
) -> Tuple[float, float]:
    """
    lam = (L~ - 1/2) / (L - 1) clamped to [0, 1], tau2 = eta / (L - L~).

    L defaults to len(beta). A larger L counts the missing coefficients
    (already truncated) as zeros.

    Raises:
        ValueError: L < 2 or L < len(beta)
        AllPrunedError: no coefficient kept
    """
    beta = np.asarray(beta)
    L = beta.size if L is None else L
    if L < 2 or L < beta.size:
        raise ValueError(f"invalid coefficient count L={L} for {beta.size} indicators")

    prior = PriorState.from_decision(beta, np.asarray(g_new), 0.0, 0.0)
    L_tilde = prior.L_tilde + (L - beta.size)
    if L - L_tilde == 0:
        raise AllPrunedError("all coefficients were classified as zero")

    lam = float(np.clip((L_tilde - 0.5) / (L - 1), 0.0, 1.0))
    tau2 = prior.eta / (L - L_tilde)
    return lam, tau2


# ============================================================
# EM steps
# ============================================================

def em_init(
    H_pilot: np.ndarray,
    operator: LinearOperator,
    sigma2: float,
    rho: float,
    t_max: int = 4,
    n_obs: int = 1,
    lambda_init: float = 0.5,
    tau2_init: Optional[float] = None,
    adapt: bool = True
) -> EmState:
    """
    g(0) = T^H H_pilot on the full active set.

    The prior is bootstrapped by one threshold pass with (lambda_init, tau2_init)
    followed by a hyperparameter update; tau2_init defaults to
    max(mean |g(0)|^2 - alpha2, alpha2). With adapt=False the initial values are
    kept as a fixed prior.
    """
    g0 = operator.adjoint(np.asarray(H_pilot))
    state = EmState(
        g=g0,
        active=np.array(operator.active_cols),
        length=operator.n_cols,
        rho=rho,
        alpha2=rho * sigma2,
        n_obs=n_obs,
        t=0,
        t_max=t_max,
    )

    alpha2 = state.alpha2_eff
    if tau2_init is None:
        tau2_init = max(float(np.mean(np.abs(g0) ** 2)) - alpha2, alpha2)
    lam, tau2 = lambda_init, tau2_init

    if adapt and alpha2 > 0:
        beta, g_boot = bg_threshold(g0, alpha2, lam, tau2)
        try:
            lam, tau2 = update_hyperparams(beta, g_boot)
        except AllPrunedError:
            logger.warning("⚠️  Bootstrap threshold removed every coefficient; keeping the initial prior")

    return state.model_copy(update={"lam": lam, "tau2": tau2})


def em_e_step(
    state: EmState,
    mf: np.ndarray,
    operator: LinearOperator
) -> np.ndarray:
    """
    g~ = (1 - rho) g + rho T_a^H mf, where mf is the matched-filter average
    mean_m conj(S_bar_m) Y_m (a single triple gives D_S_bar^H Y).
    """
    if not np.array_equal(state.active, operator.active_cols):
        raise ValueError("state and operator disagree on the active set")
    mf = np.asarray(mf)
    if mf.shape != (operator.n_rows,):
        raise ValueError(f"matched filter has shape {mf.shape}, expected ({operator.n_rows},)")
    return (1.0 - state.rho) * state.g + state.rho * operator.adjoint(mf)


def truncate(
    state: EmState,
    operator: LinearOperator,
    beta: np.ndarray
) -> Tuple[EmState, LinearOperator]:
    """
    Drop coefficients with beta = 0 and the matching columns of T for good.

    Raises:
        ValueError: called in the first iteration (t = 0) or beta does not match
        AllPrunedError: nothing would remain
    """
    if state.t < 1:
        raise ValueError("truncation is not performed in the first iteration")
    beta = np.asarray(beta)
    if beta.shape != state.active.shape:
        raise ValueError(f"beta has {beta.size} entries, {state.active.size} coefficients active")

    kept = beta == 1
    if not kept.any():
        raise AllPrunedError("truncation would remove every coefficient")
    if kept.all():
        return state, operator

    new_op = restrict_columns(operator, state.active[kept])
    new_state = state.model_copy(update={"g": state.g[kept], "active": np.array(new_op.active_cols)})
    logger.debug(f"Truncated {state.active.size} -> {new_state.active.size} coefficients at t={state.t}")
    return new_state, new_op
