import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttmkit.errors import ConfigError, ContractError, DimensionError, LengthError
from ttmkit.numkit import ParameterSet, Tensor, finite_difference_check, parameter
from ttmkit.psa import (
    AudioEncoder,
    MelConfig,
    conv1d,
    consistency_loss,
    hz_to_mel,
    mel_filterbank,
    mel_spectrogram,
    mel_to_hz,
    mix_noise,
    noise_gain_for_snr,
    psa_forward,
    scale_noise_to_snr,
    signal_power,
    snr_db,
    video_pool_matrix,
)

# -- mixing ------------------------------------------------------------------------


def test_mix_examples():
    clean, noise = np.array([0.3, -0.2, 0.1]), np.array([0.5, 0.5, -0.5])
    np.testing.assert_array_equal(mix_noise(clean, noise, 0.0), clean)
    np.testing.assert_array_equal(mix_noise(clean, noise, 1.0), noise)
    np.testing.assert_array_equal(mix_noise(np.array([1.0, -1.0]), np.zeros(2), 0.5), [0.5, -0.5])


def test_mix_clamps_and_crops():
    out = mix_noise(np.array([1.0, 1.0]), np.array([9.0, 3.0, -9.0]), 0.5, offset=1)
    np.testing.assert_array_equal(out, [1.0, -1.0])
    rng = np.random.default_rng(0)
    assert mix_noise(np.zeros(10), rng.normal(size=50), 0.3, rng=rng).shape == (10,)


def test_mix_errors():
    with pytest.raises(ConfigError):
        mix_noise(np.zeros(4), np.zeros(4), 0.5, clean_rate=16000, noise_rate=8000)
    with pytest.raises(ContractError):
        mix_noise(np.zeros(4), np.zeros(4), 1.5)
    with pytest.raises(LengthError):
        mix_noise(np.zeros(4), np.zeros(3), 0.5)


# -- SNR scaling -----------------------------------------------------------------------


def test_snr_zero_and_ten_db():
    rng = np.random.default_rng(1)
    clean, noise = rng.normal(size=1000), rng.normal(size=1000) * 3
    for db, ratio in ((0.0, 1.0), (10.0, 10.0)):
        scaled = scale_noise_to_snr(clean, noise, db) - clean
        assert abs(signal_power(clean) / signal_power(scaled) - ratio) < 1e-9 * ratio


def test_snr_measured_against_request_for_100_pairs():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(400, 5000))
        clean = rng.normal(size=n) * rng.uniform(0.01, 1)
        noise = rng.normal(size=n) * rng.uniform(0.01, 10)
        target = rng.uniform(-20, 30)
        g = noise_gain_for_snr(clean, noise, target)
        # power measured independently with a plain mean of squares
        measured = 10 * math.log10(sum(c * c for c in clean) / sum((g * x) ** 2 for x in noise))
        worst = max(worst, abs(measured - target))
        assert abs(snr_db(clean, scale_noise_to_snr(clean, noise, target) - clean) - target) < 1e-6
    assert worst < 1e-6


def test_snr_zero_power_errors():
    with pytest.raises(ContractError, match="noise"):
        scale_noise_to_snr(np.ones(4), np.zeros(4), 0.0)
    with pytest.raises(ContractError, match="clean"):
        scale_noise_to_snr(np.zeros(4), np.ones(4), 0.0)


# -- mel front end ----------------------------------------------------------------------


def test_frame_count_for_one_second():
    assert mel_spectrogram(np.zeros(16000)).shape == (98, 80)
    assert MelConfig().n_frames(16000) == (16000 - 400) // 160 + 1 == 98


def test_silence_hits_the_floor():
    np.testing.assert_array_equal(mel_spectrogram(np.zeros(1000)), np.full((4, 80), math.log(1e-10)))


def test_too_short_is_length_error():
    with pytest.raises(LengthError):
        mel_spectrogram(np.zeros(399))


def test_slaney_scale_points():
    assert hz_to_mel(0.0) == 0.0
    assert abs(hz_to_mel(1000.0) - 15.0) < 1e-12
    assert abs(hz_to_mel(6400.0) - 42.0) < 1e-12  # 27 log-steps of 6.4**(1/27) above 1 kHz
    f = np.linspace(0, 8000, 101)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


def loop_filterbank(cfg):
    """Independent triangle construction, one filter and one bin at a time."""
    lo_m, hi_m = float(hz_to_mel(cfg.fmin)), float(hz_to_mel(cfg.fmax))
    pts = [float(mel_to_hz(lo_m + (hi_m - lo_m) * i / (cfg.n_mels + 1))) for i in range(cfg.n_mels + 2)]
    n_bins = cfg.n_fft // 2 + 1
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        a, b, c = pts[m], pts[m + 1], pts[m + 2]
        for k in range(n_bins):
            f = k * cfg.sample_rate / cfg.n_fft
            if a < f <= b:
                w = (f - a) / (b - a)
            elif b < f < c:
                w = (c - f) / (c - b)
            else:
                w = 0.0
            fb[m, k] = w * 2.0 / (c - a)
    return fb


def test_filterbank_matches_loop_construction():
    cfg = MelConfig()
    fb, centres = mel_filterbank(cfg)
    np.testing.assert_allclose(fb, loop_filterbank(cfg), atol=1e-15)
    assert fb.shape == (80, 257)
    assert centres[0] > 0 and centres[-1] < 8000


def dft_magnitude(frame, n_fft):
    x = np.zeros(n_fft)
    x[: len(frame)] = frame
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    return np.abs((x * np.exp(-2j * np.pi * k * n / n_fft)).sum(axis=1))


def test_frame_matches_direct_dft_oracle():
    cfg = MelConfig()
    t = np.arange(1200) / 16000
    w = 0.5 * np.sin(2 * np.pi * 440 * t) + 0.1 * np.sin(2 * np.pi * 3000 * t)
    got = mel_spectrogram(w, cfg)[2]
    frame = w[2 * 160 : 2 * 160 + 400] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400))
    expected = np.log(np.maximum(loop_filterbank(cfg) @ dft_magnitude(frame, 512), 1e-10))
    np.testing.assert_allclose(got, expected, atol=1e-9)


def test_sine_peaks_in_bracketing_bin():
    t = np.arange(4000) / 16000
    mel = mel_spectrogram(np.sin(2 * np.pi * 440 * t))
    _, centres = mel_filterbank(MelConfig())
    peak = int(np.argmax(mel[5]))
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(8000.0), 82))
    assert edges[peak] < 440 < edges[peak + 2]
    assert abs(centres[peak] - 440) == min(abs(centres - 440))


def test_shift_by_one_hop_shifts_frames():
    w = np.random.default_rng(3).normal(size=4000)
    a = mel_spectrogram(w)
    b = mel_spectrogram(w[160:])
    np.testing.assert_allclose(b[:-1], a[1 : len(b)], atol=1e-9)


# -- encoder -------------------------------------------------------------------------------


def test_pool_matrix_rows_average():
    M = video_pool_matrix(148, 50.0, 90)
    assert M.shape == (90, 148)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-15)
    # every audio frame feeds some video frame; trailing rows may share the last one
    assert np.all((M > 0).sum(axis=0) >= 1)


def _encoder(seed=0, n_mels=6, channels=5, d_out=4):
    ps = ParameterSet()
    return ps, AudioEncoder(ps, n_mels, channels, d_out, np.random.default_rng(seed))


def test_conv1d_matches_loop_oracle():
    rng = np.random.default_rng(4)
    ps = ParameterSet()
    ps.add("c.weight", rng.normal(size=(3 * 2, 4)))
    ps.add("c.bias", rng.normal(size=4))
    x = rng.normal(size=(9, 2))
    for stride in (1, 2):
        out = conv1d(ps, "c", Tensor(x), 3, stride).data
        xp = np.vstack([np.zeros((1, 2)), x, np.zeros((1, 2))])
        W = ps["c.weight"].data.reshape(3, 2, 4)
        ref = [sum(xp[t + j] @ W[j] for j in range(3)) + ps["c.bias"].data for t in range(0, 9, stride)]
        np.testing.assert_allclose(out, np.array(ref), atol=1e-12)


def test_identical_inputs_give_identical_embeddings_and_zero_loss():
    _, enc = _encoder()
    s = np.random.default_rng(5).normal(size=(2, 40, 6))
    za, zm = psa_forward(enc, s, s.copy(), 12)
    np.testing.assert_array_equal(za.data, zm.data)
    assert consistency_loss(za, zm).item() == 0.0
    assert za.shape == (2, 12, 4)


def test_perturbing_a_shared_parameter_changes_both_paths():
    ps, enc = _encoder()
    rng = np.random.default_rng(6)
    sa, sm = rng.normal(size=(30, 6)), rng.normal(size=(30, 6))
    za0, zm0 = (z.data.copy() for z in psa_forward(enc, sa, sm, 9))
    ps["audio.conv1.weight"].data[0, 0] += 0.1
    za1, zm1 = psa_forward(enc, sa, sm, 9)
    assert not np.allclose(za0, za1.data) and not np.allclose(zm0, zm1.data)


def test_framing_mismatch_is_config_error():
    _, enc = _encoder()
    with pytest.raises(ConfigError):
        psa_forward(enc, np.zeros((30, 6)), np.zeros((31, 6)), 9)


def test_gradient_through_both_paths_and_pooling():
    ps, enc = _encoder(seed=7)
    rng = np.random.default_rng(8)
    sa, sm = rng.normal(size=(2, 30, 6)), rng.normal(size=(2, 30, 6))
    proj = rng.normal(size=(2, 9, 4))

    def loss():
        za, zm = psa_forward(enc, sa, sm, 9)
        return consistency_loss(za, zm) + (za * proj).tanh().sum()

    assert finite_difference_check(loss, dict(ps.items())).max_rel_error < 1e-6


# -- consistency loss -----------------------------------------------------------------------


def test_consistency_examples():
    assert consistency_loss(Tensor([0.3, 1.0]), Tensor([0.3, 1.0])).item() == 0.0
    assert consistency_loss(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 2.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_consistency_matches_loop_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    ref = sum((a[i, j] - b[i, j]) ** 2 for i in range(3) for j in range(5))
    got = consistency_loss(Tensor(a), Tensor(b)).item()
    assert abs(got - ref) < 1e-12
    assert got == consistency_loss(Tensor(b), Tensor(a)).item()
    assert got >= 0


def test_consistency_shape_mismatch():
    with pytest.raises(DimensionError):
        consistency_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_consistency_gradient():
    rng = np.random.default_rng(9)
    a, b = parameter(rng.normal(size=(2, 3)), "a"), parameter(rng.normal(size=(2, 3)), "b")
    assert finite_difference_check(lambda: consistency_loss(a, b), [a, b]).max_rel_error < 1e-6
