import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linn.config import ConfigError, EncodingConfig, IbcConfig, StftConfig
from linn.dsp import ComplexSpectrogram
from linn.ibc import (IbcMlp, ImplicitCorrector, apply_gain, assemble_coords, bin_norm,
                      build_gain, freq_pe, scale_corrections, time_pe)
from linn.losses import wrap
from linn.nn import grad_check
from linn.pose import Pose

ENC = EncodingConfig()


def test_freq_pe_values():
    np.testing.assert_allclose(freq_pe(0.0), np.tile([0, 1], 8), atol=1e-12)
    np.testing.assert_allclose(freq_pe(0.5), [0, -1] + [0, 1] * 7, atol=1e-12)
    np.testing.assert_allclose(freq_pe(0.25)[2:4], [0, -1], atol=1e-12)


def test_time_pe_values():
    np.testing.assert_allclose(time_pe(0.0), np.tile([0, 1], 12), atol=1e-12)
    np.testing.assert_allclose(time_pe(1.0), np.tile([0, 1], 12), atol=1e-9)


def test_coords_layout():
    pose = Pose([1, 2, 3], [0, 0, 0, 1])
    c = assemble_coords(pose, 0, 0, 0, 151)
    assert c.shape == (49,) and ENC.coord_dim == 49
    np.testing.assert_array_equal(c[:7], [1, 2, 3, 0, 0, 0, 1])
    np.testing.assert_array_equal(c[7:9], [1, 0])
    np.testing.assert_allclose(c[9:25], freq_pe(0.0))
    np.testing.assert_allclose(c[25:], time_pe(0.0))
    np.testing.assert_array_equal(assemble_coords(pose, 1, 3, 5, 151)[7:9], [0, 1])
    for bad in [(2, 0, 0), (0, 151, 0), (0, 0, 257)]:
        with pytest.raises(ConfigError):
            assemble_coords(pose, *bad, 151)


def test_param_count():
    assert IbcMlp(49, IbcConfig(), np.random.default_rng(0)).num_params() == 144898


def test_zero_mlp_outputs_zero(rng):
    mlp = IbcMlp(49, IbcConfig(hidden=8), rng, np.float64)
    for p in mlp.params():
        p.value[...] = 0
    np.testing.assert_array_equal(mlp.forward(rng.standard_normal((5, 49))), 0)


def test_width_mismatch(rng):
    with pytest.raises(ConfigError):
        IbcMlp(49, IbcConfig(hidden=8), rng).forward(np.zeros((1, 48)))


def test_purity_and_permutation(rng):
    mlp = IbcMlp(49, IbcConfig(hidden=32), rng, np.float64)
    c = rng.standard_normal((6, 49))
    same = mlp.forward(np.tile(c[:1], (4, 1)))
    assert (same == same[0]).all()
    perm = rng.permutation(6)
    np.testing.assert_allclose(mlp.forward(c[perm]), mlp.forward(c)[perm], atol=1e-12)


def test_mlp_gradient_five_coords(rng):
    mlp = IbcMlp(49, IbcConfig(hidden=32), rng, np.float64)
    c = rng.standard_normal((5, 49))
    r = rng.standard_normal((5, 2))

    def lg():
        mlp.zero_grad()
        out = mlp.forward(c)
        mlp.backward(r)
        return float(np.sum(r * out))

    assert grad_check(lg, mlp.params(), eps=1e-5, n_probe=20) < 1e-5


def test_grid_matches_pointwise(rng):
    cfg = IbcConfig(hidden=16)
    corr = ImplicitCorrector(ENC, cfg, 257, rng, np.float64)
    poses = np.concatenate([rng.standard_normal((3, 3)), np.tile([0, 0, 0, 1.0], (3, 1))], axis=1)
    frames = np.array([0, 7, 150])
    grid = corr.raw(poses, frames, 151)
    for e in range(2):
        for i, f in enumerate(frames):
            for b in (0, 100, 256):
                c = assemble_coords(Pose(poses[i, :3], poses[i, 3:]), e, f, b, 151)
                np.testing.assert_allclose(grid[e, i, b], corr.mlp.forward(c[None])[0], atol=1e-12)


def test_ear_swap(rng):
    mlp = IbcMlp(49, IbcConfig(hidden=16), rng, np.float64)
    pose = Pose([0.5, 1, 0], [0, 0, 0, 1])
    left = mlp.forward(assemble_coords(pose, 0, 3, 9, 151)[None])
    right = mlp.forward(assemble_coords(pose, 1, 3, 9, 151)[None])
    grid = mlp.forward_grid(np.concatenate([pose.as_vector(), time_pe(3 / 150)])[None],
                            freq_pe(bin_norm(257)[9:10]))
    np.testing.assert_allclose(grid[0, 0, 0], left[0], atol=1e-12)
    np.testing.assert_allclose(grid[1, 0, 0], right[0], atol=1e-12)
    swapped = mlp.forward_grid(np.concatenate([pose.as_vector(), time_pe(3 / 150)])[None],
                               freq_pe(bin_norm(257)[9:10]), ear_feat=np.eye(2)[::-1])
    np.testing.assert_allclose(swapped[::-1], grid, atol=1e-12)


def test_scale_corrections():
    da, dp = scale_corrections(np.array([0.0, 0.0]))
    assert da == 0 and dp == 0
    da, _ = scale_corrections(np.array([50.0, 0.0]))
    assert da == pytest.approx(0.8, abs=1e-5)
    _, dp = scale_corrections(np.array([0.0, np.arctanh(0.5)]))
    assert dp == pytest.approx(np.pi / 2)


def test_build_gain():
    assert build_gain(0.0, 0.0) == 1 + 0j
    np.testing.assert_allclose(build_gain(0.0, np.pi / 2), 1j, atol=1e-15)
    assert build_gain(0.8, 0.0) == pytest.approx(2.22554, abs=1e-5)


def test_apply_gain(rng):
    spec = rng.standard_normal((2, 5, 257)) + 1j * rng.standard_normal((2, 5, 257))
    np.testing.assert_array_equal(apply_gain(spec, np.ones_like(spec)), spec)
    out = apply_gain(ComplexSpectrogram(spec, StftConfig()), np.full(spec.shape, 2 + 0j))
    np.testing.assert_allclose(np.abs(out.data), 2 * np.abs(spec))
    np.testing.assert_allclose(np.angle(out.data), np.angle(spec))
    mask = rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
    out = apply_gain(spec, mask)
    np.testing.assert_allclose(np.abs(out), np.abs(spec) * np.abs(mask))
    np.testing.assert_allclose(wrap(np.angle(out) - np.angle(spec) - np.angle(mask)), 0, atol=1e-9)
    with pytest.raises(ConfigError):
        apply_gain(spec, mask[:, :4])


def test_gain_application_gradient(rng):
    # loss = <R, G*Y> over real/imag parts; gradient wrt Re G, Im G
    Y = rng.standard_normal((4, 7)) + 1j * rng.standard_normal((4, 7))
    R = rng.standard_normal((4, 7)) + 1j * rng.standard_normal((4, 7))
    G = rng.standard_normal((4, 7)) + 1j * rng.standard_normal((4, 7))

    def loss(G):
        out = apply_gain(Y, G)
        return np.sum(R.real * out.real + R.imag * out.imag)

    analytic = R * np.conj(Y)  # dL/dRe G + j dL/dIm G
    eps = 1e-6
    num = np.zeros_like(G)
    for i in np.ndindex(G.shape):
        for unit in (1, 1j):
            d = np.zeros_like(G)
            d[i] = eps * unit
            num[i] += unit * (loss(G + d) - loss(G - d)) / (2 * eps)
    np.testing.assert_allclose(analytic, num, rtol=1e-6, atol=1e-9)


def test_mask_gradient(rng):
    corr = ImplicitCorrector(ENC, IbcConfig(hidden=16), 257, rng, np.float64)
    poses = np.concatenate([rng.standard_normal((4, 3)), np.tile([0, 0, 0, 1.0], (4, 1))], axis=1)
    frames = np.arange(4)
    R = rng.standard_normal((2, 4, 257)) + 1j * rng.standard_normal((2, 4, 257))

    def lg():
        corr.mlp.zero_grad()
        G = corr.mask(poses, frames, 151)
        corr.backward(R)
        return float(np.sum(R.real * G.real + R.imag * G.imag))

    assert grad_check(lg, corr.mlp.params(), eps=1e-6, n_probe=8) < 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 30))
def test_gain_bounds_property(seed, scale):
    rng = np.random.default_rng(seed)
    corr = ImplicitCorrector(ENC, IbcConfig(hidden=16), 257, rng, np.float64)
    for p in corr.mlp.params():
        p.value *= scale
    poses = rng.uniform(-5, 5, (3, 7))
    G = corr.mask(poses, np.arange(3), 151, cache=False)
    assert (np.abs(G) >= np.exp(-0.8) * (1 - 1e-12)).all()
    assert (np.abs(G) <= np.exp(0.8) * (1 + 1e-12)).all()
    assert (np.abs(np.angle(G)) < np.pi).all()
