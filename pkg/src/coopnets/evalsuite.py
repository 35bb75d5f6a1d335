"""Analytic-oracle and trend checks.

Every check trains or samples a small model whose ground truth is known in
closed form (Gaussian MLE, probabilistic PCA, conjugate linear-Gaussian
posterior, discrete Ornstein-Uhlenbeck stationary variance, exact KL decay)
and reports the measured error against a fixed tolerance.  The "trends"
suite runs the 2-D mixture cooperative benchmark and checks the population
statistics plus the feature-gap and reconstruction trend invariants.

All checks are deterministic: seeds are hard-coded, so the report bytes are
stable across runs on the same platform.
"""

import io
from dataclasses import dataclass

import numpy as np

from .data_io import make_toy_dataset
from .langevin import (LangevinConfig, kl_decay_oracle, langevin_infer,
                       langevin_revise)
from .nets import DescriptorNet, GeneratorNet, LayerSpec, init_params
from .training import TrainConfig, train_coopnets, train_descriptor, train_generator


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool

    @staticmethod
    def of(name, measured, tolerance, larger_ok=False):
        ok = measured >= tolerance if larger_ok else measured <= tolerance
        return CheckResult(name, float(measured), float(tolerance), bool(ok))


def check_stationary_variance():
    """With f == 0 the revision chain is a discrete OU process whose exact
    stationary variance is s^2 / (1 - delta^2 / (4 s^2))."""
    net = DescriptorNet([LayerSpec.fc(1, nonlinearity="identity")], (1, 1, 1),
                        ref_std=1.0)
    net.params = init_params(net.layers, "zero")
    delta = 0.05
    y0 = np.zeros((1000, 1, 1, 1))
    y = langevin_revise(net, y0, LangevinConfig(delta, 10000, seed=42))
    exact = 1.0 / (1.0 - delta ** 2 / 4.0)
    measured = float(y.var())
    return CheckResult.of("stationary_variance", abs(measured - exact) / exact, 0.05)


def check_kl_decay():
    """The KL divergence of the marginal law from the target must be
    non-increasing along the chain for any parameterization."""
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        a = float(rng.uniform(0.0, 0.999))
        noise = float(rng.uniform(1e-4, 2.0))
        target = noise / (1.0 - a * a) if a < 1 else noise
        init = float(rng.uniform(1e-4, 5.0))
        seq = kl_decay_oracle(a, noise, target, init, 200)
        worst = max(worst, float(np.max(np.diff(seq))))
    return CheckResult.of("kl_decay_monotone", worst, 1e-12)


def check_descriptor_mle():
    """A linear descriptor f(y) = w y trained on shifted Gaussian data has
    the closed-form maximum-likelihood solution w_hat = mean / s^2."""
    rng = np.random.default_rng(7)
    data = (0.8 + rng.standard_normal(64)).reshape(-1, 1, 1, 1)
    target = float(data.mean())  # s = 1
    net = DescriptorNet([LayerSpec.fc(1, nonlinearity="identity")], (1, 1, 1),
                        ref_std=1.0)
    net.params = init_params(net.layers, "zero")
    cfg = TrainConfig(iterations=2000, lr_descriptor=0.01, n_chains=256,
                      langevin_d=LangevinConfig(0.05, 30), batch_size=0, seed=11)
    tail = []

    def cb(t, dn, gn, chain, st):
        if t >= 0.8 * cfg.iterations:
            tail.append(float(dn.params[0][0].reshape(())))

    train_descriptor(net, data, cfg, callback=cb)
    w_hat = float(np.mean(tail))
    return CheckResult.of("descriptor_mle", abs(w_hat - target) / abs(target), 0.10)


def check_generator_ppca():
    """A linear generator trained on linear-factor data recovers the same
    column space as probabilistic PCA: the span of the top-d eigenvectors
    of the sample covariance.  Measured as the largest principal angle."""
    rng = np.random.default_rng(5)
    w_true = 1.5 * rng.standard_normal((8, 2))
    ds = make_toy_dataset("linear_factor",
                          {"latent_dim": 2, "weights": w_true, "sigma": 0.5},
                          2000, seed=21)
    data = ds.examples
    flat = data.reshape(data.shape[0], -1)
    cov = np.cov(flat.T)
    evals, evecs = np.linalg.eigh(cov)
    basis = evecs[:, np.argsort(evals)[::-1][:2]]

    gnet = GeneratorNet([LayerSpec.fc(8, nonlinearity="identity")], (2, 1, 1),
                        noise_std=0.5)
    gnet.params = init_params(gnet.layers, "gaussian", 0.01,
                              np.random.default_rng(2))
    cfg = TrainConfig(iterations=150, lr_generator=0.2, batch_size=0,
                      langevin_g=LangevinConfig(0.1, 20), seed=9)
    gnet, _, _, _ = train_generator(gnet, data, cfg)
    w_learn = gnet.params[0][0].reshape(8, 2)
    qa, _ = np.linalg.qr(basis)
    qb, _ = np.linalg.qr(w_learn)
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    angle_deg = float(np.degrees(np.arccos(np.clip(sv.min(), -1.0, 1.0))))
    return CheckResult.of("generator_ppca_angle_deg", angle_deg, 5.0)


def check_posterior_inference():
    """For a linear generator the latent posterior is the conjugate
    Gaussian N((W'W/sigma^2 + I)^-1 W'Y/sigma^2, (W'W/sigma^2 + I)^-1);
    long Langevin inference must reproduce its first two moments."""
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 2))
    sigma = 0.5
    y = np.array([0.7, -0.3, 1.2, 0.4])
    prec = w.T @ w / sigma ** 2 + np.eye(2)
    cov = np.linalg.inv(prec)
    mean = cov @ (w.T @ y) / sigma ** 2

    gnet = GeneratorNet([LayerSpec.fc(4, nonlinearity="identity")], (2, 1, 1),
                        noise_std=sigma)
    gnet.params = init_params(gnet.layers, "zero")
    gnet.params[0][0][...] = w
    targets = np.broadcast_to(y.reshape(1, 4, 1, 1), (2000, 4, 1, 1)).copy()
    x = np.zeros((2000, 2, 1, 1))
    x = langevin_infer(gnet, targets, x, LangevinConfig(0.08, 500, seed=100))
    samples = []
    for k in range(10):
        x = langevin_infer(gnet, targets, x, LangevinConfig(0.08, 100, seed=200 + k))
        samples.append(x.reshape(-1, 2))
    s = np.concatenate(samples)
    mean_err = float(np.abs(s.mean(axis=0) - mean).max() / np.abs(mean).max())
    cov_err = float(np.linalg.norm(np.cov(s.T) - cov) / np.linalg.norm(cov))
    return CheckResult.of("posterior_moments", max(mean_err, cov_err), 0.05)


def toy2d_benchmark(iterations=5000, seed=3):
    """The cooperative benchmark: two-Gaussian mixture at (+-1, 0), std 0.2.

    Returns the trained nets, the metrics, and the synthesized population
    pooled over the last 10% of iterations.
    """
    ds = make_toy_dataset("gaussian_mixture_2d",
                          {"means": [[1, 0], [-1, 0]], "stds": 0.2}, 500, seed=33)
    data = ds.examples
    dnet = DescriptorNet([LayerSpec.fc(32, nonlinearity="relu"),
                          LayerSpec.fc(1, nonlinearity="identity")], (2, 1, 1),
                         ref_std=0.8)
    dnet.params = init_params(dnet.layers, "gaussian", 0.5, np.random.default_rng(1))
    gnet = GeneratorNet([LayerSpec.fc(32, nonlinearity="relu"),
                         LayerSpec.fc(2, nonlinearity="identity")], (2, 1, 1),
                        noise_std=0.5)
    gnet.params = init_params(gnet.layers, "gaussian", 0.01, np.random.default_rng(2))
    cfg = TrainConfig(iterations=iterations, lr_descriptor=0.005, lr_generator=0.1,
                      n_chains=128, langevin_d=LangevinConfig(0.15, 50),
                      langevin_g=LangevinConfig(0.1, 30), g2_inner_steps=1,
                      batch_size=0, g0_noise=False, seed=seed)
    pool = []

    def cb(t, dn, gn, chain, st):
        if t >= 0.9 * cfg.iterations:
            pool.append(chain.revised.reshape(-1, 2))

    dnet, gnet, metrics, _ = train_coopnets(dnet, gnet, data, cfg, callback=cb)
    return data, dnet, gnet, metrics, np.concatenate(pool)


def trend_checks(metrics):
    """The two invariants computed from a metrics trace: the smoothed
    feature gap over the last tenth of iterations is at most half its
    value over the first tenth, and the smoothed reconstruction error
    does not increase."""
    gaps = metrics.column("feature_gap")
    res = metrics.column("recon_error")
    k = max(1, len(gaps) // 10)
    gap_ratio = float(gaps[-k:].mean() / gaps[:k].mean())
    recon_ratio = float(res[-k:].mean() / res[:k].mean())
    return [CheckResult.of("feature_gap_halved", gap_ratio, 0.5),
            CheckResult.of("recon_error_nonincreasing", recon_ratio, 1.0)]


def check_coop_trends():
    data, dnet, gnet, metrics, synth = toy2d_benchmark()
    flat = data.reshape(-1, 2)
    dmean, dcov = flat.mean(axis=0), np.cov(flat.T)
    smean, scov = synth.mean(axis=0), np.cov(synth.T)
    results = [
        CheckResult.of("synthesized_mean", float(np.abs(smean - dmean).max()), 0.15),
        CheckResult.of("synthesized_cov",
                       float(np.linalg.norm(scov - dcov) / np.linalg.norm(dcov)), 0.30),
    ]
    results.extend(trend_checks(metrics))
    return results


ORACLE_CHECKS = (check_stationary_variance, check_kl_decay, check_descriptor_mle,
                 check_generator_ppca, check_posterior_inference)

SUITES = ("oracles", "trends")


def run_suite(name):
    if name == "oracles":
        return [fn() for fn in ORACLE_CHECKS]
    if name == "trends":
        return check_coop_trends()
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")


def report_csv(results):
    """Machine-readable pass/fail table, deterministic bytes."""
    buf = io.StringIO()
    buf.write("check,measured,tolerance,passed\n")
    for r in results:
        buf.write("%s,%s,%s,%s\n" % (r.name, repr(r.measured), repr(r.tolerance),
                                     "pass" if r.passed else "fail"))
    return buf.getvalue().encode()
