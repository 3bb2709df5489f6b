"""
Pydantic schemas for every configuration object and result record.
Invariants of the simulation chain are enforced here so that downstream
numerical code can assume validated inputs.
"""

from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


EstimatorId = Literal["pilot-ml", "pilot-mmse", "em-freq", "em-wav", "em-map", "perfect-csi"]

ALL_ESTIMATORS: List[str] = ["pilot-ml", "pilot-mmse", "em-freq", "em-wav", "em-map", "perfect-csi"]

# Estimators whose output lives in the wavelet domain (MSE measured on g)
WAVELET_ESTIMATORS = {"em-wav", "em-map"}


class WaveletBasis(BaseModel):
    """Orthogonal wavelet family used to build W."""

    family: Literal["symmlet"] = Field("symmlet", description="Wavelet family")
    filter_order: int = Field(
        8,
        ge=1,
        le=20,
        description="Vanishing-moment count (1 is the Haar degenerate case)"
    )
    levels: int = Field(4, ge=1, description="Decomposition depth J")
    length: int = Field(96, ge=2, description="Signal length L, divisible by 2^J")

    @model_validator(mode="after")
    def check_dyadic_length(self):
        if self.length % (2 ** self.levels) != 0:
            raise ValueError(
                f"length {self.length} is not divisible by 2^{self.levels}"
            )
        return self

    @property
    def pywt_name(self) -> str:
        return "haar" if self.filter_order == 1 else f"sym{self.filter_order}"


class CodeConfig(BaseModel):
    """Rate-1/2 feedforward convolutional code."""

    generators: Tuple[int, int] = Field(
        (0o7, 0o5),
        description="Generator polynomials; MSB taps the current input bit"
    )
    constraint_length: int = Field(3, ge=2, le=9)
    termination: Literal["zero-tail"] = "zero-tail"

    model_config = ConfigDict(
        json_schema_extra={
            "example": {"generators": ["7", "5"], "constraint_length": 3, "termination": "zero-tail"}
        }
    )

    @field_validator("generators", mode="before")
    @classmethod
    def parse_octal(cls, v):
        # "7", "5" are read as octal, plain integers are taken as given
        return tuple(int(g, 8) if isinstance(g, str) else g for g in v)

    @model_validator(mode="after")
    def check_non_catastrophic(self):
        g1, g2 = self.generators
        if g1 == g2:
            raise ValueError("generator polynomials must be distinct")
        top = 1 << (self.constraint_length - 1)
        for g in (g1, g2):
            if g <= 0 or g >= (top << 1):
                raise ValueError(
                    f"generator {oct(g)} exceeds constraint length {self.constraint_length}"
                )
            if not (g & top) or not (g & 1):
                raise ValueError(f"generator {oct(g)} must tap both ends of the register")
        return self

    @property
    def rate(self) -> float:
        return 0.5

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_states(self) -> int:
        return 1 << self.memory


class FrameConfig(BaseModel):
    """MB-OFDM frame geometry."""

    n_subcarriers: int = Field(128, ge=1, description="Data subcarriers per subband (N)")
    subbands: Literal[3] = 3
    payload_bits: int = Field(8192, ge=0, description="Information bits per frame")
    pilot_symbols: int = Field(3, ge=3, description="Pilot OFDM symbols at frame start")
    tfc: List[int] = Field(default_factory=lambda: [1, 3, 2], description="Subband hopping schedule")
    interleaver_seed: int = Field(0, ge=0)
    bits_per_symbol: Literal[2] = 2

    @field_validator("tfc")
    @classmethod
    def validate_tfc(cls, v):
        if len(v) == 0 or len(v) % 3 != 0:
            raise ValueError("tfc length must be a positive multiple of 3")
        for start in range(0, len(v), 3):
            if sorted(v[start:start + 3]) != [1, 2, 3]:
                raise ValueError("each aligned tfc triple must visit subbands 1, 2 and 3")
        return v

    @field_validator("pilot_symbols")
    @classmethod
    def validate_pilots(cls, v):
        if v % 3 != 0:
            raise ValueError("pilot_symbols must cover whole subband triples")
        return v

    @property
    def M(self) -> int:
        return self.subbands * self.n_subcarriers


class ChannelConfig(BaseModel):
    """Ground-truth channel model selection."""

    model: Literal["sparse-wavelet", "exponential-pdp", "file"] = "sparse-wavelet"
    k_nonzero: int = Field(20, ge=1, description="Nonzero wavelet coefficients (sparse model)")
    decay: float = Field(8.0, gt=0, description="Power-delay decay constant in samples")
    los_factor: float = Field(1.0, ge=0, description="Amplitude gain of the first (LOS) tap")
    cir_path: Optional[str] = None

    @model_validator(mode="after")
    def check_file(self):
        if self.model == "file" and not self.cir_path:
            raise ValueError("channel model 'file' requires cir_path")
        return self


class EstimatorConfig(BaseModel):
    """Semi-blind EM loop settings."""

    rho: float = Field(0.5, gt=0.0, le=1.0, description="Noise split design parameter")
    t_max: int = Field(4, ge=1, description="EM iteration budget")
    lambda_init: float = Field(0.5, ge=0.0, le=1.0, description="Bootstrap zero probability")
    tau2_init: Optional[float] = Field(None, ge=0.0, description="Bootstrap prior variance")
    adapt_hyperparams: bool = True
    truncate: bool = True
    lambda_scope: Literal["active", "full"] = "active"

    @model_validator(mode="after")
    def check_fixed_prior(self):
        if not self.adapt_hyperparams and self.tau2_init is None:
            raise ValueError("a fixed prior needs tau2_init")
        return self


class ExperimentConfig(BaseModel):
    """Flat experiment description, one JSON object on disk."""

    model_config = ConfigDict(extra="forbid")

    # channel
    channel_model: Literal["sparse-wavelet", "exponential-pdp", "file"] = "sparse-wavelet"
    k_nonzero: int = 20
    decay: float = 8.0
    los_factor: float = 1.0
    cir_path: Optional[str] = None

    # sweep
    estimators: List[EstimatorId] = Field(default_factory=lambda: list(ALL_ESTIMATORS), min_length=1)
    ebn0_grid_db: List[float] = Field(
        default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0], min_length=1
    )
    frames_per_point: int = Field(100, ge=1)
    rng_seed: int = Field(2024, ge=0)

    # frame / code
    n_subcarriers: int = 128
    payload_bits: int = 8192
    pilot_symbols: int = 3
    tfc: List[int] = Field(default_factory=lambda: [1, 3, 2])
    interleaver_seed: int = 0
    generators: Tuple[Union[int, str], Union[int, str]] = ("7", "5")
    constraint_length: int = 3

    # transform
    cir_length: int = 96
    wavelet_order: int = 8
    wavelet_levels: int = 4

    # estimators
    rho: float = Field(0.5, gt=0.0, le=1.0)
    t_max: int = Field(4, ge=1)
    lambda_scope: Literal["active", "full"] = "active"
    lambda_init: float = Field(0.5, ge=0.0, le=1.0)
    tau2_init: Optional[float] = Field(None, ge=0.0)
    adapt_hyperparams: bool = True
    truncate: bool = True
    mmse_draws: Optional[int] = Field(None, ge=1)

    output_path: str = "results"
    workers: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def validate_sections(self):
        # Build every derived section once so a bad value fails at load time
        _ = (self.frame, self.code, self.basis, self.channel, self.estimator)
        if self.cir_length > self.frame.M:
            raise ValueError(f"cir_length {self.cir_length} exceeds M={self.frame.M}")
        return self

    @property
    def frame(self) -> FrameConfig:
        return FrameConfig(
            n_subcarriers=self.n_subcarriers,
            payload_bits=self.payload_bits,
            pilot_symbols=self.pilot_symbols,
            tfc=self.tfc,
            interleaver_seed=self.interleaver_seed,
        )

    @property
    def code(self) -> CodeConfig:
        return CodeConfig(generators=self.generators, constraint_length=self.constraint_length)

    @property
    def basis(self) -> WaveletBasis:
        return WaveletBasis(
            filter_order=self.wavelet_order, levels=self.wavelet_levels, length=self.cir_length
        )

    @property
    def channel(self) -> ChannelConfig:
        return ChannelConfig(
            model=self.channel_model,
            k_nonzero=self.k_nonzero,
            decay=self.decay,
            los_factor=self.los_factor,
            cir_path=self.cir_path,
        )

    @property
    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(
            rho=self.rho,
            t_max=self.t_max,
            lambda_init=self.lambda_init,
            tau2_init=self.tau2_init,
            adapt_hyperparams=self.adapt_hyperparams,
            truncate=self.truncate,
            lambda_scope=self.lambda_scope,
        )


class IterationRecord(BaseModel):
    """Per-iteration diagnostics of one estimator run on one frame."""

    iteration: int = Field(..., ge=0)
    active: int = Field(..., ge=0, description="Estimated parameter count after this iteration")
    lam: Optional[float] = Field(None, ge=0.0, le=1.0)
    tau2: Optional[float] = Field(None, ge=0.0)
    mse: Optional[float] = Field(None, ge=0.0)


class MetricRow(BaseModel):
    """One CSV row: estimator x Eb/N0 point."""

    estimator: EstimatorId
    ebn0_db: float
    mse: float = Field(..., ge=0.0)
    ber: float = Field(..., ge=0.0, le=1.0)
    frames: int = Field(..., ge=1)
    seed: int
    mse_stderr: float = Field(0.0, ge=0.0)
    bit_errors: int = Field(0, ge=0)
    bits: int = Field(0, ge=0)
    mean_active: Optional[float] = Field(None, description="Final active count (EM-MAP only)")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "estimator": "em-map",
                "ebn0_db": 8.0,
                "mse": 4.1e-4,
                "ber": 1.2e-5,
                "frames": 500,
                "seed": 2024,
                "mse_stderr": 1.3e-5,
                "bit_errors": 49,
                "bits": 4096000,
                "mean_active": 20.4
            }
        }
    )
