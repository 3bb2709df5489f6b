"""Shared pytest fixtures: small operator, frame geometry and seeded generators."""

import numpy as np
import pytest

from config.schemas import CodeConfig, EstimatorConfig, ExperimentConfig, FrameConfig, WaveletBasis
from tools.transforms import build_operator


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def code():
    return CodeConfig()


@pytest.fixture
def small_basis():
    return WaveletBasis(filter_order=8, levels=3, length=24)


@pytest.fixture
def small_frame_cfg():
    # N=32 -> M=96; 180 payload bits -> 182 QPSK slots -> two data triples
    return FrameConfig(n_subcarriers=32, payload_bits=180)


@pytest.fixture
def small_operator(small_frame_cfg, small_basis):
    return build_operator(small_frame_cfg.M, small_basis)


@pytest.fixture
def estimator_cfg():
    return EstimatorConfig(rho=0.5, t_max=4)


@pytest.fixture
def tiny_experiment(tmp_path):
    return ExperimentConfig(
        k_nonzero=6,
        ebn0_grid_db=[2.0, 8.0],
        frames_per_point=2,
        rng_seed=99,
        n_subcarriers=16,
        payload_bits=60,
        cir_length=24,
        wavelet_levels=3,
        t_max=3,
        mmse_draws=100,
        output_path=str(tmp_path / "out"),
    )
