"""Tests for encoding, interleaving, mapping, framing and the channel model."""

import numpy as np
import pytest

from config.schemas import CodeConfig, FrameConfig
from tools.phy import (
    PILOT_SYMBOL,
    QPSK_BITS,
    QPSK_CONSTELLATION,
    apply_channel,
    build_frame,
    conv_encode,
    deinterleave,
    frame_layout,
    gold_sequence,
    interleave,
    interleaver_permutation,
    load_frame,
    noise_variance,
    qpsk_map,
    save_frame,
)


class TestConvEncode:
    def test_zero_input(self, code):
        assert not conv_encode(np.zeros(4, dtype=np.uint8), code).any()

    def test_hand_traced(self, code):
        out = conv_encode([1, 0, 1, 1], code)
        np.testing.assert_array_equal(out[:8].reshape(-1, 2), [[1, 1], [1, 0], [0, 0], [0, 1]])

    def test_impulse_response(self, code):
        out = conv_encode([1, 0, 0, 0], code)
        # g1 = 111, g2 = 101 interleaved
        np.testing.assert_array_equal(out, [1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0])

    def test_length(self, code):
        assert conv_encode(np.ones(17, dtype=np.uint8), code).size == 2 * (17 + 2)
        assert conv_encode([], code).size == 4

    def test_linearity(self, code, rng):
        for _ in range(20):
            a = rng.integers(0, 2, 50, dtype=np.uint8)
            b = rng.integers(0, 2, 50, dtype=np.uint8)
            np.testing.assert_array_equal(
                conv_encode(a ^ b, code), conv_encode(a, code) ^ conv_encode(b, code)
            )

    def test_code_validation(self):
        assert CodeConfig(generators=["7", "5"]).generators == (7, 5)
        with pytest.raises(ValueError):
            CodeConfig(generators=(7, 7))
        with pytest.raises(ValueError):
            CodeConfig(generators=(6, 5))


class TestInterleaver:
    # reference seed and permutation recorded for the repo fixtures
    REFERENCE_SEED = 7
    REFERENCE_PERMUTATION = [4, 1, 7, 0, 6, 3, 5, 2]

    def test_reference_permutation(self):
        np.testing.assert_array_equal(
            interleaver_permutation(8, self.REFERENCE_SEED), self.REFERENCE_PERMUTATION
        )
        np.testing.assert_array_equal(interleaver_permutation(8, 0), [4, 2, 3, 5, 1, 6, 7, 0])

    def test_gold_sequence_seed_zero(self):
        # with c_init = 0 the x2 register stays empty and the sequence is x1 alone
        c = gold_sequence(0, 64)
        x1 = np.zeros(1664 + 31, dtype=np.uint8)
        x1[0] = 1
        for k in range(31, x1.size):
            x1[k] = x1[k - 28] ^ x1[k - 31]
        np.testing.assert_array_equal(c, x1[1600:1664])

    def test_gold_sequence_rejects_wide_seed(self):
        with pytest.raises(ValueError):
            gold_sequence(1 << 31, 8)

    def test_round_trip(self, rng):
        x = rng.normal(size=101)
        np.testing.assert_array_equal(deinterleave(interleave(x, 3), 3), x)

    def test_deterministic(self):
        np.testing.assert_array_equal(interleaver_permutation(64, 5), interleaver_permutation(64, 5))
        assert sorted(interleaver_permutation(64, 5)) == list(range(64))

    def test_seed_changes_permutation(self):
        assert not np.array_equal(interleaver_permutation(64, 1), interleaver_permutation(64, 2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            deinterleave(np.zeros(8), 0, length=9)


class TestQpsk:
    def test_table(self):
        np.testing.assert_allclose(qpsk_map([0, 0]), [(1 + 1j) / np.sqrt(2)])
        np.testing.assert_allclose(qpsk_map([0, 1, 1, 0, 1, 1]), QPSK_CONSTELLATION[[1, 2, 3]])

    def test_unit_modulus(self):
        np.testing.assert_allclose(np.abs(QPSK_CONSTELLATION), 1.0)

    def test_gray_neighbours(self):
        for i in range(4):
            for j in range(4):
                distance = abs(QPSK_CONSTELLATION[i] - QPSK_CONSTELLATION[j])
                if np.isclose(distance, np.sqrt(2)):
                    assert np.sum(QPSK_BITS[i] != QPSK_BITS[j]) == 1


class TestFrame:
    def test_pilots_fixed(self, small_frame_cfg, code, rng):
        for _ in range(3):
            frame, _ = build_frame(rng.integers(0, 2, 180), small_frame_cfg, code)
            np.testing.assert_allclose(frame.S[0], PILOT_SYMBOL)
            assert frame.pilot_mask[0].all() and not frame.pilot_mask[1:].any()

    def test_slot_bookkeeping(self, small_frame_cfg, code, rng):
        frame, record = build_frame(rng.integers(0, 2, 180), small_frame_cfg, code)
        layout = frame.layout
        assert layout.n_coded_bits == 2 * (180 + 2)
        assert layout.n_data_slots == (layout.n_coded_bits + layout.n_pad_bits) // 2
        assert layout.n_data_slots == small_frame_cfg.M * (layout.n_triples - layout.n_pilot_triples)
        assert record.channel_bits.size == 2 * layout.n_data_slots
        assert frame.known_mask.sum() == small_frame_cfg.M + layout.n_pad_bits // 2

    def test_symbols_match_bits(self, small_frame_cfg, code, rng):
        frame, record = build_frame(rng.integers(0, 2, 180), small_frame_cfg, code)
        layout = frame.layout
        np.testing.assert_allclose(
            frame.S[layout.data_rows, layout.data_cols], qpsk_map(record.channel_bits)
        )
        np.testing.assert_array_equal(
            deinterleave(record.channel_bits[: layout.n_coded_bits], small_frame_cfg.interleaver_seed),
            record.coded,
        )

    def test_unit_energy(self, small_frame_cfg, code, rng):
        frame, _ = build_frame(rng.integers(0, 2, 180), small_frame_cfg, code)
        assert np.mean(np.abs(frame.S) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_tfc_hopping(self, code):
        cfg = FrameConfig(n_subcarriers=4, payload_bits=22, tfc=[2, 1, 3])
        layout = frame_layout(cfg, code)
        # first data OFDM symbol is j=3 -> subband tfc[0] = 2 -> stacked columns 4..7
        np.testing.assert_array_equal(layout.data_cols[:4], [4, 5, 6, 7])
        np.testing.assert_array_equal(layout.data_cols[4:8], [0, 1, 2, 3])
        np.testing.assert_array_equal(layout.data_cols[8:12], [8, 9, 10, 11])
        assert (layout.data_rows[:12] == 1).all()

    def test_zero_payload(self, code):
        cfg = FrameConfig(n_subcarriers=8, payload_bits=0)
        frame, record = build_frame(np.array([], dtype=np.uint8), cfg, code)
        assert frame.n_triples == 2
        assert record.coded.size == 4 and not record.coded.any()

    def test_payload_mismatch(self, small_frame_cfg, code):
        with pytest.raises(ValueError):
            build_frame(np.zeros(10), small_frame_cfg, code)

    def test_tfc_validation(self):
        with pytest.raises(ValueError):
            FrameConfig(tfc=[1, 1, 2])
        with pytest.raises(ValueError):
            FrameConfig(pilot_symbols=4)


class TestChannelApplication:
    def test_noiseless_inversion(self, small_frame_cfg, code, rng):
        frame, _ = build_frame(rng.integers(0, 2, 180), small_frame_cfg, code)
        H = rng.normal(size=96) + 1j * rng.normal(size=96)
        rx = apply_channel(frame, H, 1e-30, rng)
        np.testing.assert_allclose(rx.Y / rx.S, np.broadcast_to(H, rx.S.shape), atol=1e-10)

    def test_pure_noise_variance(self, code, rng):
        cfg = FrameConfig(n_subcarriers=128, payload_bits=40000)
        frame, _ = build_frame(rng.integers(0, 2, 40000), cfg, code)
        rx = apply_channel(frame, np.zeros(cfg.M), 0.3, rng)
        assert rx.Y.size >= 1e4
        assert np.mean(np.abs(rx.Y) ** 2) == pytest.approx(0.3, rel=0.05)

    def test_deterministic(self, small_frame_cfg, code):
        frame, _ = build_frame(np.ones(180, dtype=np.uint8), small_frame_cfg, code)
        H = np.ones(96)
        a = apply_channel(frame, H, 0.1, np.random.default_rng(5))
        b = apply_channel(frame, H, 0.1, np.random.default_rng(5))
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_errors(self, small_frame_cfg, code, rng):
        frame, _ = build_frame(np.zeros(180, dtype=np.uint8), small_frame_cfg, code)
        with pytest.raises(ValueError):
            apply_channel(frame, np.ones(10), 0.1, rng)
        with pytest.raises(ValueError):
            apply_channel(frame, np.ones(96), 0.0, rng)

    def test_noise_whiteness(self, code, rng):
        template, _ = build_frame(np.array([], dtype=np.uint8), FrameConfig(n_subcarriers=1, payload_bits=0), code)
        tall = template.model_copy(update={"S": np.tile(template.S, (50_000, 1))})
        Z = apply_channel(tall, np.zeros(3), 0.4, rng).Y
        n = Z.shape[0]
        assert n == 100_000

        cov = Z.T @ Z.conj() / n
        power = np.sqrt(np.real(np.diag(cov)))
        corr = cov / np.outer(power, power)
        off_diag = corr[~np.eye(3, dtype=bool)]
        assert np.abs(off_diag).max() < 3 / np.sqrt(n)

        lag1 = np.sum(Z[1:] * Z[:-1].conj(), axis=0) / (n - 1) / power**2
        assert np.abs(lag1).max() < 3 / np.sqrt(n)


class TestFrameFixtures:
    @pytest.fixture
    def received(self, small_frame_cfg, code, rng):
        template, _ = build_frame(rng.integers(0, 2, 180), small_frame_cfg, code)
        return apply_channel(template, rng.normal(size=96) + 1j * rng.normal(size=96), 0.05, rng)

    def test_round_trip(self, received, small_frame_cfg, code, tmp_path):
        sidecar = save_frame(tmp_path / "frame", received, small_frame_cfg, code, seeds={"rng": 1234})
        assert sidecar.suffix == ".json"

        frame, cfg, code_back, seeds = load_frame(tmp_path / "frame.c64")
        assert cfg == small_frame_cfg and code_back == code
        assert seeds == {"rng": 1234}
        assert frame.sigma2 == pytest.approx(0.05)
        np.testing.assert_allclose(frame.S, received.S, atol=1e-6)
        np.testing.assert_allclose(frame.Y, received.Y, rtol=1e-6, atol=1e-6)
        np.testing.assert_array_equal(frame.pilot_mask, received.pilot_mask)

    def test_little_endian_complex64_layout(self, received, small_frame_cfg, code, tmp_path):
        save_frame(tmp_path / "frame", received, small_frame_cfg, code)
        raw = (tmp_path / "frame.c64").read_bytes()
        assert len(raw) == 2 * received.S.size * 8
        samples = np.frombuffer(raw, dtype="<c8")
        assert samples[0] == np.complex64(PILOT_SYMBOL)
        np.testing.assert_allclose(samples[received.S.size:].reshape(received.Y.shape), received.Y, rtol=1e-6, atol=1e-6)

    def test_template_without_samples(self, small_frame_cfg, code, tmp_path):
        template, _ = build_frame(np.zeros(180, dtype=np.uint8), small_frame_cfg, code)
        save_frame(tmp_path / "tpl", template, small_frame_cfg, code)
        frame, _, _, _ = load_frame(tmp_path / "tpl.json")
        assert frame.Y is None

    def test_truncated_sample_file(self, received, small_frame_cfg, code, tmp_path):
        save_frame(tmp_path / "frame", received, small_frame_cfg, code)
        data = tmp_path / "frame.c64"
        data.write_bytes(data.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_frame(tmp_path / "frame")


def test_noise_variance_convention():
    # B * R = 1 at rate 1/2 QPSK, so 0 dB gives sigma2 equal to the channel gain
    assert noise_variance(0.0, 0.5, 2, 1.0) == pytest.approx(1.0)
    assert noise_variance(10.0, 0.5, 2, 1 / 96) == pytest.approx(1 / 960)
