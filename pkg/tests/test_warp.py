import numpy as np
import pytest

from linn.config import ConfigError, WarpConfig
from linn.dsp import fractional_resample
from linn.nn import grad_check
from linn.pose import PoseTrack
from linn.warp import (TimeDomainWarp, WarpField, WarpNet, apply_warp, geometric_delays,
                       geometric_warp, neural_warp_correction, upsample, upsample_adjoint)

from conftest import moving_track

CFG = WarpConfig()


def test_delay_arithmetic():
    d = geometric_delays(np.array([[1.715, 0, 0]]), WarpConfig(ear_offset=0.0))
    np.testing.assert_allclose(d, 240.0)
    d = geometric_delays(np.array([[0, 1.09, 0]]), CFG)
    assert d[0, 0] == pytest.approx(48000 / 343)
    assert d[0, 0] < d[1, 0]  # left ear is nearer a +y source


def test_static_source_constant_delay():
    tr = PoseTrack.static([1.715, 0, 0], n=20)
    f = geometric_warp(tr, 4000, WarpConfig(ear_offset=0.0))
    np.testing.assert_allclose(np.arange(4000) - f.indices, 240.0, atol=1e-9)


def test_integer_delay_copy(rng):
    x = rng.standard_normal(1000)
    y = apply_warp(x, WarpField(np.tile(np.arange(1000.0) - 7, (2, 1))))
    np.testing.assert_array_equal(y[:, :7], 0)
    np.testing.assert_array_equal(y[:, 7:], np.tile(x[:-7], (2, 1)))


def test_identity_field(rng):
    x = rng.standard_normal(300)
    np.testing.assert_array_equal(apply_warp(x, WarpField(np.tile(np.arange(300.0), (2, 1)))),
                                  np.tile(x, (2, 1)))


def test_length_mismatch():
    with pytest.raises(ConfigError):
        apply_warp(np.zeros(10), WarpField(np.zeros((2, 11))))


def _zero_crossing_rate(y):
    return np.count_nonzero(np.diff(np.signbit(y))) / len(y)


def test_doppler():
    fs, f0, L = 48000, 1000.0, 48000
    x = np.sin(2 * np.pi * f0 * np.arange(L) / fs)
    rate = 0.02  # delay grows by 0.02 samples per sample: receding source
    idx = np.arange(L) - rate * np.arange(L)
    y = fractional_resample(x, idx)
    f_meas = _zero_crossing_rate(y[1000:]) * fs / 2
    assert abs(f_meas / (f0 * (1 - rate)) - 1) < 0.01


def test_median_plane_symmetric():
    vals = np.zeros((30, 7))
    vals[:, 0] = np.linspace(-2, 2, 30)
    vals[:, 2] = 0.3
    vals[:, 6] = 1
    f = geometric_warp(PoseTrack(vals), 12000, CFG)
    np.testing.assert_array_equal(f.indices[0], f.indices[1])


def test_zero_init_warp_is_geometric(rng):
    tdw = TimeDomainWarp(CFG, rng, np.float64)
    tr = moving_track(0.2)
    n = 9600
    np.testing.assert_array_equal(tdw.field(tr, n).indices, geometric_warp(tr, n, CFG).indices)


def test_correction_bounded(rng):
    net = WarpNet(CFG, rng, np.float64)
    for conv in net.convs:
        conv.K.value[...] = rng.standard_normal(conv.K.shape) * 50
    tr = moving_track(0.5)
    c = neural_warp_correction(tr, CFG, net)
    assert c.shape == (2, len(tr))
    assert np.abs(c).max() <= 64.0
    assert np.abs(c).max() > 60  # saturated, still inside the bound


def test_default_warpnet_param_count():
    assert WarpNet(CFG, np.random.default_rng(0)).num_params() == 1234


def test_upsample_adjoint(rng):
    c = rng.standard_normal((2, 13))
    g = rng.standard_normal((2, 4000))
    lhs = np.sum(upsample(c, 4000, CFG) * g)
    rhs = np.sum(c * upsample_adjoint(g, 13, CFG))
    assert abs(lhs - rhs) < 1e-9 * abs(lhs)


def test_warp_net_gradient(rng):
    cfg = WarpConfig(neural_channels=4, w_max=4.0)
    tdw = TimeDomainWarp(cfg, rng, np.float64)
    tdw.net.convs[-1].K.value[...] = rng.standard_normal(tdw.net.convs[-1].K.shape) * 0.3
    x = rng.standard_normal(2048 + 256)
    tr = moving_track(2048 / 48000)
    r = rng.standard_normal((2, 2048))

    def lg():
        tdw.net.zero_grad()
        y = tdw.forward(x, tr, 2048, start=256)
        tdw.backward(r)
        return float(np.sum(r * y))

    assert grad_check(lg, tdw.net.params(), eps=1e-6, n_probe=6) < 1e-4


def test_monotone_indices_under_realistic_motion(rng):
    # fast walk (3 m/s) plus saturated correction still never reads backwards
    tdw = TimeDomainWarp(CFG, rng, np.float64)
    tr = moving_track(1.0, radius=1.0, turns=0.5)
    f = tdw.field(tr, 48000)
    assert np.isfinite(f.indices).all()
    assert (np.diff(f.indices, axis=1) > 0).all()
