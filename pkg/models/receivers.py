"""
Receivers: the semi-blind EM loops (EM-MAP, EM-Wav, EM-Freq) coupled with
BCJR decoding, and the single-pass perfect-CSI and pilot-only decoders.

Each EM loop runs, for t = 0 .. t_max-1:
    decode with the current H  ->  symbol posterior means
    E-step on the matched-filter average  ->  M-step  ->  truncation (t >= 1)
and finishes with one decode under the final estimate whose hard decisions
are the output bits.
"""

import logging
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from config.schemas import CodeConfig, EstimatorConfig, IterationRecord
from models.em import (
    AllPrunedError,
    EmState,
    bg_threshold,
    em_e_step,
    em_init,
    matched_filter,
    truncate,
    update_hyperparams,
)
from models.pilot import pilot_hits, pilot_ml, wiener_filter
from tools.channels import ChannelRealization
from tools.phy import FrameObservation
from tools.siso import Trellis, channel_order_posteriors, decode_frame, symbol_posteriors
from tools.transforms import LinearOperator

logger = logging.getLogger(__name__)


class EstimatorRun(BaseModel):
    """Everything one receiver produced on one frame."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    estimator: str
    H_hat: np.ndarray
    g_hat: Optional[np.ndarray] = None
    decoded: np.ndarray
    trajectory: List[IterationRecord] = []
    g_history: List[np.ndarray] = []
    H_history: List[np.ndarray] = []
    final_active: Optional[int] = None
    stopped_early: bool = False


class Receiver:
    """Common decode plumbing."""

    name = "receiver"

    def __init__(self, code: CodeConfig, interleaver_seed: int = 0):
        self.code = code
        self.interleaver_seed = interleaver_seed
        self.trellis = Trellis(code)

    def decode(self, frame: FrameObservation, H_hat: np.ndarray):
        return decode_frame(frame, H_hat, self.code, self.interleaver_seed, self.trellis)

    def symbol_means(self, frame: FrameObservation, H_hat: np.ndarray) -> np.ndarray:
        bits = self.decode(frame, H_hat)
        channel_p1 = channel_order_posteriors(bits, frame.layout, self.interleaver_seed)
        return symbol_posteriors(channel_p1, frame).mean

    def _single_pass(self, frame: FrameObservation, H_hat: np.ndarray, mse: Optional[float]) -> EstimatorRun:
        decoded = self.decode(frame, H_hat).hard_bits
        return EstimatorRun(
            estimator=self.name,
            H_hat=H_hat,
            decoded=decoded,
            trajectory=[IterationRecord(iteration=0, active=H_hat.size, mse=mse)],
            H_history=[H_hat],
        )


class PerfectCsiReceiver(Receiver):
    """Decodes with the true channel."""

    name = "perfect-csi"

    def run(self, frame: FrameObservation, truth: ChannelRealization) -> EstimatorRun:
        return self._single_pass(frame, np.asarray(truth.H_freq), 0.0)


class PilotReceiver(Receiver):
    """Decodes once with a pilot-only estimate, ML or Wiener-smoothed."""

    def __init__(
        self,
        code: CodeConfig,
        interleaver_seed: int = 0,
        covariance: Optional[np.ndarray] = None
    ):
        super().__init__(code, interleaver_seed)
        self.covariance = covariance
        self.name = "pilot-ml" if covariance is None else "pilot-mmse"
        self.wiener = lru_cache(maxsize=32)(self._wiener_matrix)

    def _wiener_matrix(self, sigma2: float, hits: float) -> np.ndarray:
        return wiener_filter(self.covariance, sigma2, hits)

    def estimate(self, frame: FrameObservation) -> np.ndarray:
        H_ml = pilot_ml(frame.Y, frame.S, frame.pilot_mask)
        if self.covariance is None:
            return H_ml
        hits = float(pilot_hits(frame.pilot_mask).min())
        return self.wiener(float(frame.sigma2), hits) @ H_ml

    def run(self, frame: FrameObservation, truth: Optional[ChannelRealization] = None) -> EstimatorRun:
        H_hat = self.estimate(frame)
        mse = None if truth is None else float(np.sum(np.abs(H_hat - truth.H_freq) ** 2))
        return self._single_pass(frame, H_hat, mse)


class SemiBlindReceiver(Receiver):
    """EM iterations on the whole frame; subclasses define the M-step."""

    wavelet_domain = True

    def __init__(
        self,
        code: CodeConfig,
        settings: EstimatorConfig,
        operator: Optional[LinearOperator] = None,
        interleaver_seed: int = 0
    ):
        super().__init__(code, interleaver_seed)
        self.settings = settings
        self.operator = operator
        if self.wavelet_domain and operator is None:
            raise ValueError(f"{self.name} needs a wavelet operator")

    # --- hooks -------------------------------------------------------

    def initialize(self, H_pilot: np.ndarray, frame: FrameObservation) -> Tuple[EmState, Optional[LinearOperator]]:
        s = self.settings
        state = em_init(
            H_pilot,
            self.operator,
            frame.sigma2,
            s.rho,
            t_max=s.t_max,
            n_obs=frame.n_triples,
            lambda_init=s.lambda_init,
            tau2_init=s.tau2_init,
            adapt=s.adapt_hyperparams,
        )
        return state, self.operator

    def update(self, state: EmState, op, mf: np.ndarray) -> Tuple[EmState, Optional[LinearOperator]]:
        raise NotImplementedError

    def response(self, state: EmState, op) -> np.ndarray:
        return op.apply(state.g)

    def estimate_full(self, state: EmState) -> Optional[np.ndarray]:
        return state.full()

    def record(self, state: EmState, op, iteration: int, truth: Optional[ChannelRealization]) -> IterationRecord:
        mse = None
        if truth is not None:
            if self.wavelet_domain:
                mse = float(np.sum(np.abs(state.full() - truth.g_true) ** 2))
            else:
                mse = float(np.sum(np.abs(state.g - truth.H_freq) ** 2))
        return IterationRecord(
            iteration=iteration,
            active=int(state.active.size),
            lam=state.lam,
            tau2=state.tau2,
            mse=mse,
        )

    # --- loop --------------------------------------------------------

    def run(
        self,
        frame: FrameObservation,
        truth: Optional[ChannelRealization] = None,
        genie_symbols: Optional[np.ndarray] = None
    ) -> EstimatorRun:
        """
        Args:
            frame: received frame with pilots
            truth: ground truth for per-iteration MSE diagnostics
            genie_symbols: known transmitted grid; replaces decoder posteriors
                in every E-step
        """
        if frame.Y is None:
            raise ValueError("frame has no received samples")

        H_pilot = pilot_ml(frame.Y, frame.S, frame.pilot_mask)
        state, op = self.initialize(H_pilot, frame)

        trajectory = [self.record(state, op, 0, truth)]
        g_history = [self.estimate_full(state)] if self.wavelet_domain else []
        H_history = [self.response(state, op)]
        stopped_early = False

        for t in range(self.settings.t_max):
            H_hat = self.response(state, op)
            S_bar = genie_symbols if genie_symbols is not None else self.symbol_means(frame, H_hat)
            mf = matched_filter(frame.Y, S_bar)

            try:
                state, op = self.update(state.model_copy(update={"t": t}), op, mf)
            except AllPrunedError as e:
                logger.warning(f"⚠️  {self.name}: {e} at iteration {t + 1}; keeping previous estimate")
                stopped_early = True
                break

            trajectory.append(self.record(state, op, t + 1, truth))
            if self.wavelet_domain:
                g_history.append(self.estimate_full(state))
            H_history.append(self.response(state, op))
            logger.debug(
                f"{self.name} t={t + 1}: active={state.active.size} "
                f"lam={state.lam} tau2={state.tau2} mse={trajectory[-1].mse}"
            )

        H_hat = self.response(state, op)
        decoded = self.decode(frame, H_hat).hard_bits
        return EstimatorRun(
            estimator=self.name,
            H_hat=H_hat,
            g_hat=self.estimate_full(state) if self.wavelet_domain else None,
            decoded=decoded,
            trajectory=trajectory,
            g_history=g_history,
            H_history=H_history,
            final_active=int(state.active.size),
            stopped_early=stopped_early,
        )


class EmMapReceiver(SemiBlindReceiver):
    """Bernoulli-Gaussian MAP M-step with hyperparameter adaptation and truncation."""

    name = "em-map"

    def update(self, state, op, mf):
        s = self.settings
        g_tilde = em_e_step(state, mf, op)
        beta, g_new = bg_threshold(g_tilde, state.alpha2_eff, state.lam, state.tau2)

        lam, tau2 = state.lam, state.tau2
        L = op.n_active if s.lambda_scope == "active" else op.n_cols
        if s.adapt_hyperparams and L >= 2:
            lam, tau2 = update_hyperparams(beta, g_new, L)
        elif s.adapt_hyperparams:
            # a single remaining coefficient leaves nothing to estimate lam from
            logger.debug(f"{self.name} t={state.t + 1}: one active coefficient, prior kept")

        state = state.model_copy(update={"g": g_new, "lam": lam, "tau2": tau2})
        if s.truncate and state.t >= 1:
            state, op = truncate(state, op, beta)
        return state, op


class EmWavReceiver(SemiBlindReceiver):
    """Uniform prior: the M-step keeps the E-step output as is."""

    name = "em-wav"

    def initialize(self, H_pilot, frame):
        s = self.settings
        state = em_init(
            H_pilot, self.operator, frame.sigma2, s.rho,
            t_max=s.t_max, n_obs=frame.n_triples, adapt=False,
        )
        return state.model_copy(update={"lam": None, "tau2": None}), self.operator

    def update(self, state, op, mf):
        return state.model_copy(update={"g": em_e_step(state, mf, op)}), op


class EmFreqReceiver(SemiBlindReceiver):
    """EM directly on the M subcarrier gains: H <- (1 - rho) H + rho mf."""

    name = "em-freq"
    wavelet_domain = False

    def initialize(self, H_pilot, frame):
        M = H_pilot.size
        state = EmState(
            g=np.asarray(H_pilot, dtype=complex),
            active=np.arange(M),
            length=M,
            rho=self.settings.rho,
            alpha2=self.settings.rho * frame.sigma2,
            n_obs=frame.n_triples,
            t_max=self.settings.t_max,
        )
        return state, None

    def update(self, state, op, mf):
        return state.model_copy(update={"g": (1.0 - state.rho) * state.g + state.rho * mf}), op

    def response(self, state, op):
        return state.g

    def estimate_full(self, state):
        return None


def em_map_run(
    frame: FrameObservation,
    operator: LinearOperator,
    code: CodeConfig,
    cfg: EstimatorConfig,
    interleaver_seed: int = 0,
    truth: Optional[ChannelRealization] = None,
    genie_symbols: Optional[np.ndarray] = None
) -> EstimatorRun:
    return EmMapReceiver(code, cfg, operator, interleaver_seed).run(frame, truth, genie_symbols)


def em_wav_run(
    frame: FrameObservation,
    operator: LinearOperator,
    code: CodeConfig,
    cfg: EstimatorConfig,
    interleaver_seed: int = 0,
    truth: Optional[ChannelRealization] = None,
    genie_symbols: Optional[np.ndarray] = None
) -> EstimatorRun:
    return EmWavReceiver(code, cfg, operator, interleaver_seed).run(frame, truth, genie_symbols)


def em_freq_run(
    frame: FrameObservation,
    code: CodeConfig,
    cfg: EstimatorConfig,
    interleaver_seed: int = 0,
    truth: Optional[ChannelRealization] = None,
    genie_symbols: Optional[np.ndarray] = None
) -> EstimatorRun:
    return EmFreqReceiver(code, cfg, None, interleaver_seed).run(frame, truth, genie_symbols)
