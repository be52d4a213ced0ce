from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, numpy_denoiser, rel_err
from toydiff import numerics as nx
from toydiff.container import ContainerError, read_container
from toydiff.model import Denoiser, GuidanceConfig, guided_predict, time_features

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def m():
    return Denoiser.init((4, 4), ["circle", "square"], width=24, time_dim=8, cond_dim=6, seed=1)


def test_output_shape_and_determinism(m):
    rng = np.random.default_rng(0)
    z, c = rng.standard_normal((4, 4)), rng.standard_normal(6)
    a = m.predict_noise(z, 500, c)
    b = m.predict_noise(z, 500, c)
    assert a.shape == z.shape
    assert a.tobytes() == b.tobytes()
    flat = m.predict_noise(z.reshape(-1), 500, c)
    assert flat.shape == (16,)
    assert flat.tobytes() == a.reshape(-1).tobytes()


def test_input_validation(m):
    with pytest.raises(nx.ShapeError):
        m.predict_noise(np.zeros(15), 3, np.zeros(6))
    with pytest.raises(nx.ShapeError):
        m.predict_noise(np.zeros(16), 3, np.zeros(5))
    with pytest.raises(ValueError):
        m.predict_noise(np.zeros(16), 1000, np.zeros(6))


@pytest.mark.parametrize("parameterization", ["v", "eps"])
def test_gradient_wrt_condition(m, parameterization):
    mm = Denoiser(m.params, m.labels, m.latent_dim, m.width, m.time_dim, m.cond_dim, m.T_train, m.latent_shape,
                  parameterization=parameterization)
    rng = np.random.default_rng(1)
    z, c0, w = rng.standard_normal(16), rng.standard_normal(6), rng.standard_normal(16)

    def loss(c):
        return nx.sum_(nx.mul(mm.predict_noise(z, 250, c), w))

    g = nx.Graph()
    c = g.leaf(c0)
    got = g.backward(loss(c))[c.id]
    assert rel_err(got, central_diff(lambda v: float(loss(v)), c0)) < 1e-4


def test_v_parameterization_skip_path(m):
    # at t with alpha_bar -> small the prediction is dominated by sqrt(1 - ab) z
    rng = np.random.default_rng(2)
    z, c = rng.standard_normal(16), rng.standard_normal(6)
    eps_m = Denoiser(m.params, m.labels, m.latent_dim, m.width, m.time_dim, m.cond_dim, m.T_train, m.latent_shape,
                     parameterization="eps")
    ab = m._alpha_bars[700]
    want = np.sqrt(1 - ab) * z + np.sqrt(ab) * eps_m.predict_noise(z, 700, c)
    np.testing.assert_allclose(m.predict_noise(z, 700, c), want, rtol=1e-13, atol=1e-15)


def test_guidance_examples(m):
    rng = np.random.default_rng(3)
    z, c = rng.standard_normal(16), rng.standard_normal(6)
    eps_c = m.predict_noise(z, 100, c)
    eps_u = m.predict_noise(z, 100, m.null_embedding)
    np.testing.assert_allclose(guided_predict(m, GuidanceConfig(1.0), z, 100, c), eps_c, atol=1e-14)
    np.testing.assert_allclose(guided_predict(m, GuidanceConfig(0.0), z, 100, c), eps_u, atol=1e-14)
    for s in (0.0, 2.0, 9.0):
        np.testing.assert_allclose(guided_predict(m, GuidanceConfig(s), z, 100, m.null_embedding), eps_u, atol=1e-14)
    assert np.array_equal(guided_predict(m, GuidanceConfig(5.0, enabled=False), z, 100, c), eps_c)
    with pytest.raises(ValueError):
        GuidanceConfig(-0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20))
def test_guidance_is_affine_in_scale(s1, s2):
    m = Denoiser.init((4, 4), ["circle", "square"], width=24, time_dim=8, cond_dim=6, seed=1)
    rng = np.random.default_rng(4)
    z, c = rng.standard_normal(16), rng.standard_normal(6)
    e = {s: guided_predict(m, GuidanceConfig(s), z, 40, c) for s in (s1, s2, s1 + s2, 0.0)}
    np.testing.assert_allclose(e[s1] + e[s2], e[s1 + s2] + e[0.0], atol=1e-10)


def test_embed_label(m):
    assert np.array_equal(m.embed_label("square"), m.params["emb"][1])
    with pytest.raises(KeyError, match="triangle"):
        m.embed_label("triangle")


def test_init_distribution():
    m = Denoiser.init((16, 16), ["a", "b", "c"], seed=0)
    fan_in = 256 + m.time_dim + m.cond_dim
    assert np.abs(m.params["w1"]).max() <= 1 / np.sqrt(fan_in)
    assert abs(m.params["emb"].std() - 0.1) < 0.02
    again = Denoiser.init((16, 16), ["a", "b", "c"], seed=0)
    assert all(np.array_equal(m.params[k], again.params[k]) for k in m.params)


def test_time_features():
    f = time_features([0, 7], 8, 1000)
    assert f.shape == (2, 8)
    np.testing.assert_allclose(f[0], [0, 0, 0, 0, 1, 1, 1, 1])
    freqs = np.exp(-np.log(1000.0) * np.arange(4) / 3)
    assert freqs[0] == 1.0 and freqs[-1] == pytest.approx(1e-3)
    np.testing.assert_allclose(f[1, :4], np.sin(7 * freqs))


def test_save_load_round_trip(m, tmp_path):
    p = tmp_path / "m.ckpt"
    m.save(p)
    back = Denoiser.load(p)
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    assert (back.labels, back.latent_shape, back.cond_dim, back.parameterization) == (
        m.labels, m.latent_shape, m.cond_dim, m.parameterization)
    with pytest.raises(ContainerError):
        read_container(p, b"TRAJ")


def test_golden_prediction():
    m = Denoiser.load(GOLDEN / "denoiser.ckpt")
    meta, gold = read_container(GOLDEN / "predict_noise.bin", b"GOLD")
    assert m.parameterization == "v"
    out = m.predict_noise(gold["z"], meta["t"], gold["c"])
    assert out.tobytes() == gold["pred_v"].tobytes()


@pytest.mark.parametrize("parameterization", ["v", "eps"])
def test_forward_matches_longhand_numpy(m, parameterization):
    mm = Denoiser(m.params, m.labels, m.latent_dim, m.width, m.time_dim, m.cond_dim, m.T_train, m.latent_shape,
                  parameterization=parameterization)
    rng = np.random.default_rng(9)
    for t in (0, 17, 640, 999):
        z, c = rng.standard_normal((4, 4)), rng.standard_normal(6)
        want = numpy_denoiser(m.params, z, t, c, m.time_dim, m.T_train, parameterization)
        np.testing.assert_allclose(mm.predict_noise(z, t, c), want, rtol=1e-12, atol=1e-13)
