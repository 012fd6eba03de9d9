import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linn.config import ConfigError, LossWeights, ModelConfig, StftConfig
from linn.dsp import stft_array
from linn.losses import (amplitude_l2, count_macs, evaluate, ibc_query_macs, ipd, ipd_l2,
                         measure_rtf, phase_l2, training_loss, wave_l2, warp_macs_per_knot,
                         wrap, wrapped_mse)

CFG = StftConfig()


def _stereo(rng, n=6000):
    return rng.standard_normal((2, n))


def test_training_loss_identical(rng):
    y = _stereo(rng)
    loss, g = training_loss(y, y.copy())
    assert loss == 0 and not g.any()


def test_training_loss_constant_offset(rng):
    y = _stereo(rng, 1000)
    loss, _ = training_loss(y + 0.25, y, LossWeights(1.0, 0.0))
    assert loss == pytest.approx(0.25 * np.sqrt(2000))


def test_wrap():
    assert abs(wrap(3.0 - (-3.0))) == pytest.approx(2 * np.pi - 6.0)
    assert wrap(np.pi) == pytest.approx(np.pi)
    assert wrap(-np.pi) == pytest.approx(np.pi)
    np.testing.assert_allclose(wrap(np.linspace(-20, 20, 101) + 2 * np.pi),
                               wrap(np.linspace(-20, 20, 101)), atol=1e-12)


def test_phase_term_single_bin():
    # one bin of each spectrogram at angles 3.0 and -3.0
    a, b = np.exp(3.0j), np.exp(-3.0j)
    assert abs(wrap(np.angle(a) - np.angle(b))) == pytest.approx(0.28318530717958623)


def test_length_mismatch(rng):
    with pytest.raises(ConfigError):
        training_loss(_stereo(rng, 100), _stereo(rng, 101))
    with pytest.raises(ConfigError):
        wave_l2(np.zeros(3), np.zeros(4))


def test_training_loss_gradient(rng):
    y_ref = _stereo(rng, 2048)
    y = y_ref + 0.3 * _stereo(rng, 2048)
    w = LossWeights(1.0, 0.5)  # a heavier phase weight makes the check sharper
    _, g = training_loss(y, y_ref, w)
    for _ in range(20):
        c, i = rng.integers(2), rng.integers(300, 1700)
        d = np.zeros_like(y)
        d[c, i] = 1e-6
        num = (training_loss(y + d, y_ref, w)[0] - training_loss(y - d, y_ref, w)[0]) / 2e-6
        assert abs(num - g[c, i]) <= 1e-5 * max(abs(num), 1e-3 * np.abs(g).max())


def test_wave_l2_examples():
    assert wave_l2(np.full((2, 10), 0.01), np.zeros((2, 10))) == pytest.approx(0.1)
    assert wave_l2(np.ones((2, 5)), np.ones((2, 5))) == 0


def test_amplitude_l2(rng):
    y = _stereo(rng, 3000)
    assert amplitude_l2(y, y) == 0
    assert amplitude_l2(np.zeros((2, 300)), np.zeros((2, 300))) == 0
    ref = float(np.mean(np.abs(stft_array(y, CFG)) ** 2))
    assert amplitude_l2(2 * y, y) == pytest.approx(ref, rel=1e-12)


def test_phase_l2_half_period_delay():
    # 4-bin period sinusoid at bin 128; a 2-sample delay flips its phase
    n = np.arange(8192)
    y_ref = np.cos(2 * np.pi * 128 * n / 512)[None]
    y = np.cos(2 * np.pi * 128 * (n - 2) / 512)[None]
    Y, R = stft_array(y, CFG), stft_array(y_ref, CFG)
    d = wrap(np.angle(Y[0, 5:-5, 128]) - np.angle(R[0, 5:-5, 128]))
    np.testing.assert_allclose(np.abs(d), np.pi, atol=1e-9)
    assert phase_l2(y, y_ref) > 1.0


def test_ipd_closed_form():
    assert ipd(np.exp(1j * np.pi / 4), np.exp(1j * np.pi / 8)) == pytest.approx(np.pi / 8)


def test_ipd_l2_cases(rng):
    x = rng.standard_normal(4000)
    same = np.stack([x, x])
    assert ipd_l2(same, np.stack([x, 2 * x])) == 0
    y = _stereo(rng, 4000)
    assert ipd_l2(y, y) == 0
    with pytest.raises(ConfigError):
        ipd_l2(x[None], x[None])


def test_evaluate_zero_and_report(rng):
    y = _stereo(rng, 4000)
    rep = evaluate(y, y)
    assert (rep.wave_l2, rep.amplitude_l2, rep.phase_l2, rep.ipd_l2) == (0, 0, 0, 0)
    lines = dict(l.split("=", 1) for l in rep.to_text().splitlines())
    assert lines["wave_l2"] == "0" and lines["energy_floor"] == "0.0001"
    assert json.loads(rep.to_json())["stft"]["hop"] == 256


def test_evaluate_flipped_channel(rng):
    y = _stereo(rng, 4000)
    est = y.copy()
    est[1] *= -1
    rep = evaluate(est, y)
    assert rep.ipd_l2 > 0 and rep.wave_l2 > 0
    assert rep.amplitude_l2 == pytest.approx(0, abs=1e-20)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(-3, 3))
def test_wrapped_metrics_invariant_to_2pi(seed, k):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-4, 4, 50), rng.uniform(-4, 4, 50)
    assert wrapped_mse(a + 2 * np.pi * k, b) == pytest.approx(wrapped_mse(a, b), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_non_negative(seed):
    rng = np.random.default_rng(seed)
    rep = evaluate(rng.standard_normal((2, 1200)), rng.standard_normal((2, 1200)))
    assert min(rep.wave_l2, rep.amplitude_l2, rep.phase_l2, rep.ipd_l2) >= 0


def test_mac_counting():
    cfg = ModelConfig()
    assert ibc_query_macs(cfg) == 144128
    assert warp_macs_per_knot(cfg) == 1200
    r1, r2 = count_macs(cfg, 1.0, 146132), count_macs(cfg, 2.0, 146132)
    assert r1.frames_per_second == 187.5
    assert r1.queries_per_frame == 514
    assert r1.ibc_macs_per_second == 187.5 * 514 * 144128
    assert r1.warp_macs_per_second == 120 * 1200
    assert r2.total_macs == 2 * r1.total_macs
    assert "dsp_macs" in r1.basis


def test_measure_rtf_rejects_empty():
    with pytest.raises(ConfigError):
        measure_rtf(lambda: None, 0.0)


def test_measure_rtf_stable():
    x = np.random.default_rng(0).standard_normal(1 << 18)
    job = lambda: np.fft.rfft(x).sum()  # noqa: E731
    a = measure_rtf(job, 1.0, repetitions=7)
    b = measure_rtf(job, 1.0, repetitions=7)
    assert a > 0 and b > 0
    assert abs(a / b - 1) < 0.2
