"""Tests for the soft demapper, BCJR decoder and symbol posteriors."""

import numpy as np
import pytest

from experiments.selftest import brute_force_posteriors
from tools.phy import PILOT_SYMBOL, QPSK_BITS, QPSK_CONSTELLATION, apply_channel, build_frame, conv_encode
from tools.siso import (
    Trellis,
    bcjr_decode,
    channel_order_posteriors,
    decode_frame,
    gray_llrs,
    soft_demap,
    symbol_posteriors,
)


class TestDemapper:
    def test_noiseless_decisions(self):
        H = 0.8 * np.exp(0.3j)
        for idx, s in enumerate(QPSK_CONSTELLATION):
            llr = soft_demap(H * s, H, 1e-6)
            np.testing.assert_array_equal((llr > 0).astype(int), QPSK_BITS[idx])

    def test_zero_channel_is_erasure(self):
        np.testing.assert_allclose(soft_demap(np.array([0.3 - 1j]), np.array([0.0]), 0.5), 0.0)

    def test_closed_form_matches_generic(self, rng):
        Y = rng.normal(size=500) + 1j * rng.normal(size=500)
        H = rng.normal(size=500) + 1j * rng.normal(size=500)
        np.testing.assert_allclose(gray_llrs(Y, H, 0.7), soft_demap(Y, H, 0.7), rtol=1e-9, atol=1e-9)

    def test_phase_flip_symmetry(self, rng):
        Y = rng.normal(size=50) + 1j * rng.normal(size=50)
        H = rng.normal(size=50) + 1j * rng.normal(size=50)
        np.testing.assert_allclose(soft_demap(-Y, -H, 0.3), soft_demap(Y, H, 0.3), atol=1e-9)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            soft_demap(np.ones(2), np.ones(2), 0.0)


class TestTrellis:
    def test_transitions(self, code):
        trellis = Trellis(code)
        assert trellis.n_states == 4
        # from state 0, input 1 emits (1, 1) and moves to state 2
        assert trellis.next_state[0, 1] == 2
        np.testing.assert_array_equal(trellis.outputs[0, 1], [1, 1])
        for ns in range(4):
            for s in trellis.prev_state[ns]:
                assert trellis.next_state[s, trellis.prev_input[ns]] == ns


class TestBcjr:
    def test_no_evidence(self, code):
        post = bcjr_decode(np.zeros(2 * 12), code)
        np.testing.assert_allclose(post.info_p1, 0.5, atol=1e-12)

    def test_saturated(self, code, rng):
        u = rng.integers(0, 2, 30, dtype=np.uint8)
        c = conv_encode(u, code)
        post = bcjr_decode(40.0 * (2.0 * c - 1.0), code)
        np.testing.assert_array_equal(post.hard_bits, u)
        assert np.all((post.info_p1 < 1e-9) | (post.info_p1 > 1 - 1e-9))

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_brute_force(self, code, seed):
        rng = np.random.default_rng(seed)
        K = 1 + seed % 12
        llrs = rng.normal(0.0, 2.5, size=2 * (K + code.memory))
        post = bcjr_decode(llrs, code)
        info_ref, coded_ref = brute_force_posteriors(llrs, code)
        np.testing.assert_allclose(post.info_p1, info_ref, atol=1e-9)
        np.testing.assert_allclose(post.p1, coded_ref, atol=1e-9)

    def test_odd_length(self, code):
        with pytest.raises(ValueError):
            bcjr_decode(np.zeros(7), code)


class TestSymbolPosteriors:
    @pytest.fixture
    def frame(self, small_frame_cfg, code, rng):
        frame, record = build_frame(rng.integers(0, 2, 180), small_frame_cfg, code)
        return frame, record

    def test_uninformative(self, frame):
        frame, _ = frame
        post = symbol_posteriors(np.full(2 * frame.layout.n_data_slots, 0.5), frame, keep_dist=True)
        data = ~frame.known_mask
        np.testing.assert_allclose(post.mean[data], 0.0, atol=1e-15)
        np.testing.assert_allclose(post.mean[frame.pilot_mask], PILOT_SYMBOL)
        np.testing.assert_allclose(post.dist.sum(axis=-1), 1.0, atol=1e-12)

    def test_saturated(self, frame):
        frame, record = frame
        post = symbol_posteriors(record.channel_bits.astype(float), frame)
        np.testing.assert_allclose(post.mean, frame.S, atol=1e-15)

    def test_half_known(self, frame):
        frame, _ = frame
        p1 = np.tile([1.0, 0.5], frame.layout.n_data_slots)
        post = symbol_posteriors(p1, frame)
        slot = (frame.layout.data_rows[0], frame.layout.data_cols[0])
        assert post.mean[slot] == pytest.approx(-1 / np.sqrt(2))
        assert np.all(np.abs(post.mean) <= 1 + 1e-12)

    def test_length_mismatch(self, frame):
        frame, _ = frame
        with pytest.raises(ValueError):
            symbol_posteriors(np.zeros(3), frame)


def test_decode_frame_recovers_payload(small_frame_cfg, code, rng):
    payload = rng.integers(0, 2, 180, dtype=np.uint8)
    template, record = build_frame(payload, small_frame_cfg, code)
    H = rng.normal(size=96) + 1j * rng.normal(size=96)
    frame = apply_channel(template, H, 1e-4, rng)

    bits = decode_frame(frame, H, code, small_frame_cfg.interleaver_seed)
    np.testing.assert_array_equal(bits.hard_bits, payload)

    p1 = channel_order_posteriors(bits, frame.layout, small_frame_cfg.interleaver_seed)
    np.testing.assert_array_equal((p1 > 0.5).astype(np.uint8), record.channel_bits)
