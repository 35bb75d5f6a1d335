import numpy as np
import pytest

from coopnets.langevin import LangevinConfig
from coopnets.nets import DescriptorNet, GeneratorNet, LayerSpec, init_params
from coopnets.training import (TrainConfig, descriptor_gradient_estimate,
                               generator_gradient_estimate, params_add,
                               params_norm, train_coopnets, train_descriptor,
                               train_generator)


def _dnet(seed=1, ref_std=1.0):
    net = DescriptorNet([LayerSpec.fc(8, nonlinearity="relu"),
                         LayerSpec.fc(1, nonlinearity="identity")],
                        (1, 2, 2), ref_std=ref_std)
    net.params = init_params(net.layers, scheme="gaussian", std=0.3,
                             rng=np.random.default_rng(seed))
    return net


def _gnet(seed=2):
    net = GeneratorNet([LayerSpec.fc(8, nonlinearity="relu"),
                        LayerSpec.fc(4, nonlinearity="identity", out_shape=(1, 2, 2))],
                       (2, 1, 1), noise_std=0.5)
    net.params = init_params(net.layers, scheme="gaussian", std=0.1,
                             rng=np.random.default_rng(seed))
    return net


def _data(n=50, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 1, 2, 2)) * 0.4


def test_descriptor_gradient_is_feature_difference():
    """Objective gradient = E_data[df/dW] - E_model[df/dW] with per-batch means."""
    net = _dnet()
    obs = _data(10, 3)
    syn = _data(12, 4) + 0.5
    got = descriptor_gradient_estimate(net, obs, syn)
    _, go = net.backward(obs)
    _, gs = net.backward(syn)
    for layer, (wo, bo), (ws, bs) in zip(got, go, gs):
        np.testing.assert_allclose(layer[0], wo / 10 - ws / 12, atol=1e-12)
        np.testing.assert_allclose(layer[1], bo / 10 - bs / 12, atol=1e-12)


def test_generator_gradient_matches_fd():
    """Gradient of -mean ||Y - g(X)||^2 / (2 sigma^2) w.r.t. parameters."""
    net = _gnet()
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6,) + net.latent_shape)
    y = rng.standard_normal((6,) + net.output_shape)
    grads = generator_gradient_estimate(net, y, x)

    def loss():
        r = y - net.forward(x)
        return -(r ** 2).sum() / (2 * net.noise_std ** 2) / 6

    h = 1e-6
    for li in range(len(net.params)):
        w = net.params[li][0]
        idx = tuple(np.unravel_index(w.size // 2, w.shape))
        orig = w[idx]
        w[idx] = orig + h
        fp = loss()
        w[idx] = orig - h
        fm = loss()
        w[idx] = orig
        assert abs((fp - fm) / (2 * h) - grads[li][0][idx]) < 1e-5


def test_params_helpers():
    net = _dnet()
    g = [[np.ones_like(w), np.ones_like(b)] for w, b in net.params]
    before = [w.copy() for w, _ in net.params]
    out = params_add(net.params, g, 0.5)
    for (w, _), b0 in zip(out, before):
        np.testing.assert_allclose(w, b0 + 0.5, atol=1e-15)
    n = sum(w.size + b.size for w, b in net.params)
    assert params_norm(g) == pytest.approx(np.sqrt(n))


def test_train_descriptor_runs_and_is_deterministic():
    cfg = TrainConfig(5, n_chains=16, langevin_d=LangevinConfig(0.1, 5),
                      batch_size=0, seed=7)
    data = _data()
    n1, c1, m1, s1 = train_descriptor(_dnet(), data, cfg)
    n2, c2, m2, s2 = train_descriptor(_dnet(), data, cfg)
    for (w1, b1), (w2, b2) in zip(n1.params, n2.params):
        np.testing.assert_array_equal(w1, w2)
    np.testing.assert_array_equal(c1.revised, c2.revised)
    assert m1.to_csv_bytes() == m2.to_csv_bytes()
    assert s1["iteration"] == 5


def test_train_descriptor_resume_matches_uninterrupted():
    data = _data()
    full = TrainConfig(10, n_chains=16, langevin_d=LangevinConfig(0.1, 5),
                       batch_size=0, seed=7)
    half = TrainConfig(5, n_chains=16, langevin_d=LangevinConfig(0.1, 5),
                       batch_size=0, seed=7)
    net_full, chain_full, _, _ = train_descriptor(_dnet(), data, full)
    net_half, _, _, state = train_descriptor(_dnet(), data, half)
    net_res, chain_res, _, _ = train_descriptor(net_half, data, full,
                                                resume_state=state)
    for (w1, _), (w2, _) in zip(net_full.params, net_res.params):
        np.testing.assert_array_equal(w1, w2)
    np.testing.assert_array_equal(chain_full.revised, chain_res.revised)


def test_train_generator_reduces_reconstruction_error():
    rng = np.random.default_rng(11)
    w = 0.8 * rng.standard_normal((4, 2))
    data = (rng.standard_normal((80, 2)) @ w.T).reshape(80, 1, 2, 2)
    cfg = TrainConfig(200, lr_generator=0.1,
                      langevin_g=LangevinConfig(0.05, 10), batch_size=0, seed=9)
    net = GeneratorNet([LayerSpec.fc(4, nonlinearity="identity", out_shape=(1, 2, 2))],
                       (2, 1, 1), noise_std=0.5)
    net.params = init_params(net.layers, scheme="gaussian", std=0.01,
                             rng=np.random.default_rng(10))
    _, _, metrics, _ = train_generator(net, data, cfg)
    err = metrics.column("recon_error")
    assert err[-1] < 0.3 * err[0]


def test_generator_resume_matches_uninterrupted():
    data = _data(20, 12)
    full = TrainConfig(8, lr_generator=0.05, langevin_g=LangevinConfig(0.05, 5),
                       batch_size=0, seed=3)
    half = TrainConfig(4, lr_generator=0.05, langevin_g=LangevinConfig(0.05, 5),
                       batch_size=0, seed=3)
    nf, lf, _, _ = train_generator(_gnet(), data, full)
    nh, _, _, state = train_generator(_gnet(), data, half)
    nr, lr_, _, _ = train_generator(nh, data, full, resume_state=state)
    np.testing.assert_array_equal(lf, lr_)
    for (w1, _), (w2, _) in zip(nf.params, nr.params):
        np.testing.assert_array_equal(w1, w2)


def test_coopnets_resume_matches_uninterrupted():
    data = _data()
    kw = dict(n_chains=16, langevin_d=LangevinConfig(0.1, 5),
              langevin_g=LangevinConfig(0.05, 3), lr_generator=0.05,
              batch_size=0, seed=21)
    df, gf, mf, _ = train_coopnets(_dnet(), _gnet(), data, TrainConfig(10, **kw))
    dh, gh, mh, state = train_coopnets(_dnet(), _gnet(), data, TrainConfig(5, **kw))
    dr, gr, mr, _ = train_coopnets(dh, gh, data, TrainConfig(10, **kw),
                                   resume_state=state)
    for (w1, _), (w2, _) in zip(df.params, dr.params):
        np.testing.assert_array_equal(w1, w2)
    for (w1, _), (w2, _) in zip(gf.params, gr.params):
        np.testing.assert_array_equal(w1, w2)
    assert mf.to_csv_bytes().endswith(mr.to_csv_bytes().split(b"\n", 1)[1].split(b"\n", 6)[-1])


def test_coopnets_reduces_to_algorithm_d_when_generator_frozen():
    """With lr_G = 0, no latent inference, and no emission noise, the
    cooperative loop trains the descriptor exactly like the standalone
    algorithm seeded from the same frozen generator."""
    data = _data()
    gnet = _gnet()
    cfg = TrainConfig(6, n_chains=16, langevin_d=LangevinConfig(0.1, 5),
                      langevin_g=LangevinConfig(0.1, 0), lr_generator=0.0,
                      batch_size=0, g0_noise=False, seed=17)
    d_coop, _, m_coop, _ = train_coopnets(_dnet(), gnet, data, cfg)
    d_alg, _, m_alg, _ = train_descriptor(_dnet(), data, cfg, generator=gnet)
    for (w1, b1), (w2, b2) in zip(d_coop.params, d_alg.params):
        np.testing.assert_array_equal(w1, w2)
        np.testing.assert_array_equal(b1, b2)
    np.testing.assert_array_equal(m_coop.column("feature_gap"),
                                  m_alg.column("feature_gap"))


def test_degenerate_cooperation_zero_generator_gradient():
    """With no revision (l_D = 0) and no emission noise the revised batch
    equals g(X) exactly, so the regression gradient vanishes."""
    gnet = _gnet()
    rng = np.random.default_rng(19)
    x = rng.standard_normal((8,) + gnet.latent_shape)
    y = gnet.forward(x)
    grads = generator_gradient_estimate(gnet, y, x)
    assert params_norm(grads) < 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(-1)
    with pytest.raises(ValueError):
        TrainConfig(1, n_chains=0)
    with pytest.raises(ValueError):
        TrainConfig(1, lr_decay="cosine")
    with pytest.raises(ValueError):
        train_coopnets(_dnet(), _gnet(), np.zeros((0, 1, 2, 2)), TrainConfig(1))


def test_shape_mismatch_rejected():
    gnet = GeneratorNet([LayerSpec.fc(9, nonlinearity="identity", out_shape=(1, 3, 3))],
                        (2, 1, 1), noise_std=0.5)
    with pytest.raises(ValueError):
        train_coopnets(_dnet(), gnet, _data(), TrainConfig(1))
