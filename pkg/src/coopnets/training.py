"""Training loops: the descriptor loop, the generator loop, and the
cooperative loop that interweaves them (G0 / D1 / G1 / D2 / G2).

All loops drive a single master RNG seeded from the config; every random
decision (latent draws, per-iteration Langevin sub-seeds, minibatch picks)
is pulled from it in a fixed order, so runs are bit-reproducible and a
checkpointed RNG state resumes exactly.
"""

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .langevin import (DivergenceError, LangevinConfig, langevin_infer,
                       langevin_revise)

METRIC_COLUMNS = ("iter", "grad_norm_D", "feature_gap", "recon_error",
                  "energy_S1", "energy_S2", "energy_S3")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    lr_descriptor: float = 0.01
    lr_generator: float = 1e-4
    lr_decay: str = "constant"  # constant | inverse_t
    n_chains: int = 64
    langevin_d: LangevinConfig = field(default_factory=lambda: LangevinConfig(0.002, 10))
    langevin_g: LangevinConfig = field(default_factory=lambda: LangevinConfig(0.1, 0))
    g2_inner_steps: int = 1
    batch_size: int = 64  # 0 means always full batch
    g0_noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")
        if self.g2_inner_steps < 1:
            raise ValueError("g2_inner_steps must be >= 1")
        if self.lr_decay not in ("constant", "inverse_t"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")

    def rate(self, base, t):
        if self.lr_decay == "inverse_t":
            return base / (1.0 + t)
        return base


@dataclass
class ChainState:
    """The synthesized population of one iteration (S1/S2/S3)."""

    latents: np.ndarray = None
    drafts: np.ndarray = None
    revised: np.ndarray = None
    reconstructions: np.ndarray = None


class TrainMetrics:
    """Append-only per-iteration diagnostics, emitted as CSV."""

    def __init__(self):
        self.rows = []

    def append(self, **kw):
        self.rows.append(tuple(float(kw[c]) for c in METRIC_COLUMNS))

    def column(self, name):
        i = METRIC_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def write_csv(self, fp):
        fp.write(",".join(METRIC_COLUMNS) + "\n")
        for row in self.rows:
            fp.write("%d,%s\n" % (int(row[0]), ",".join(repr(v) for v in row[1:])))

    def to_csv_bytes(self):
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue().encode()


def params_add(params, grads, rate):
    """sgd_update: params + rate * grads, element-wise (ascent on log-likelihood)."""
    out = []
    for p, g in zip(params, grads):
        if len(p) != len(g):
            raise ValueError("parameter/gradient structure mismatch")
        group = []
        for a, b in zip(p, g):
            if a.shape != b.shape:
                raise ValueError(f"parameter shape {a.shape} != gradient shape {b.shape}")
            group.append(a + rate * b)
        out.append(group)
    return out


sgd_update = params_add


def params_norm(grads):
    return float(np.sqrt(sum(float((a * a).sum()) for g in grads for a in g)))


def _scale(grads, c):
    return [[a * c for a in g] for g in grads]


def _sub(ga, gb):
    return [[x - y for x, y in zip(a, b)] for a, b in zip(ga, gb)]


def descriptor_gradient_estimate(net, observed, synthesized):
    """Monte Carlo log-likelihood gradient for the descriptor:
    mean df/dW over observed minus mean df/dW over synthesized."""
    if observed.shape[0] == 0 or synthesized.shape[0] == 0:
        raise ValueError("descriptor gradient needs non-empty observed and synthesized batches")
    _, g_obs = net.backward(observed)
    _, g_syn = net.backward(synthesized)
    return _sub(_scale(g_obs, 1.0 / observed.shape[0]),
                _scale(g_syn, 1.0 / synthesized.shape[0]))


def generator_gradient_estimate(net, targets, latents):
    """Ascent gradient of the generator objective
    -(1/n) sum ||Y_i - g(X_i)||^2 / (2 sigma^2)."""
    if targets.shape[0] != latents.shape[0]:
        raise ValueError(f"batch mismatch: {targets.shape[0]} targets vs {latents.shape[0]} latents")
    residual = (targets - net.forward(latents)) / net.noise_std ** 2
    _, grads = net.backward(latents, residual)
    return _scale(grads, 1.0 / targets.shape[0])


def _pick_batch(rng, data, batch_size):
    n = data.shape[0]
    if batch_size <= 0 or n <= batch_size:
        return data
    idx = rng.choice(n, size=batch_size, replace=False)
    return data[idx]


def _rng_from_state(seed, state):
    rng = np.random.default_rng(seed)
    if state is not None:
        rng.bit_generator.state = state
    return rng


def _sub_seed(rng):
    return int(rng.integers(1 << 62))


def _feature_gap(net, observed, synthesized):
    return float(abs(net.score(observed).mean() - net.score(synthesized).mean()))


def _per_pixel_error(a, b):
    return float(((a - b) ** 2).sum() / a.shape[0] / np.prod(a.shape[1:]))


def train_descriptor(net, data, cfg, generator=None, resume_state=None, callback=None):
    """Algorithm D: persistent-chain Langevin revision (D1) then density
    shifting (D2).

    Chains start as draws from the reference distribution N(0, s^2).  When
    `generator` is given, the chains are instead re-initialized every
    iteration from fresh generator samples (the cooperative Step G0), which
    makes the descriptor trajectory identical to the cooperative loop with
    a frozen generator.
    """
    if data.shape[0] == 0:
        raise ValueError("no training data")
    net = net.copy()
    state = resume_state or {}
    rng = _rng_from_state(cfg.seed, state.get("rng_state"))
    start = state.get("iteration", 0)
    chains = state.get("chains")
    if chains is None and generator is None:
        chains = net.ref_std * rng.standard_normal((cfg.n_chains,) + net.input_shape)
    metrics = TrainMetrics()
    drafts = None
    for t in range(start, cfg.iterations):
        if generator is not None:
            latents = rng.standard_normal((cfg.n_chains,) + generator.latent_shape)
            chains = generator.forward(latents)
            if cfg.g0_noise:
                chains = chains + generator.noise_std * rng.standard_normal(chains.shape)
        drafts = chains
        try:
            chains = langevin_revise(net, chains, cfg.langevin_d, base_seed=_sub_seed(rng))
        except DivergenceError as e:
            e.args = (f"iteration {t}: {e.args[0]}",)
            raise
        obs = _pick_batch(rng, data, cfg.batch_size)
        # diagnostics reflect the state the gradient was computed at
        gap = _feature_gap(net, obs, chains)
        e1, e2 = float(net.energy(drafts).mean()), float(net.energy(chains).mean())
        grad = descriptor_gradient_estimate(net, obs, chains)
        net.params = params_add(net.params, grad, cfg.rate(cfg.lr_descriptor, t))
        metrics.append(iter=t, grad_norm_D=params_norm(grad),
                       feature_gap=gap, recon_error=0.0,
                       energy_S1=e1, energy_S2=e2, energy_S3=0.0)
        if callback is not None:
            callback(t, net, None, ChainState(drafts=drafts, revised=chains),
                     _pack_state(t + 1, rng, chains=chains))
    return net, ChainState(drafts=drafts, revised=chains), metrics, \
        _pack_state(cfg.iterations, rng, chains=chains)


def train_generator(net, data, cfg, resume_state=None, callback=None):
    """Algorithm G: Langevin inference of per-example latents (G1), warm
    started from the previous iteration, then reconstruction updates (G2)."""
    if data.shape[0] == 0:
        raise ValueError("no training data")
    net = net.copy()
    state = resume_state or {}
    rng = _rng_from_state(cfg.seed, state.get("rng_state"))
    start = state.get("iteration", 0)
    latents = state.get("latents")
    if latents is None:
        latents = rng.standard_normal((data.shape[0],) + net.latent_shape)
    metrics = TrainMetrics()
    for t in range(start, cfg.iterations):
        try:
            latents = langevin_infer(net, data, latents, cfg.langevin_g,
                                     base_seed=_sub_seed(rng))
        except DivergenceError as e:
            e.args = (f"iteration {t}: {e.args[0]}",)
            raise
        for _ in range(cfg.g2_inner_steps):
            grad = generator_gradient_estimate(net, data, latents)
            net.params = params_add(net.params, grad, cfg.rate(cfg.lr_generator, t))
        recon = net.forward(latents)
        metrics.append(iter=t, grad_norm_D=0.0, feature_gap=0.0,
                       recon_error=_per_pixel_error(data, recon),
                       energy_S1=0.0, energy_S2=0.0,
                       energy_S3=params_norm(grad))
        if callback is not None:
            callback(t, None, net, ChainState(latents=latents, reconstructions=recon),
                     _pack_state(t + 1, rng, latents=latents))
    return net, latents, metrics, _pack_state(cfg.iterations, rng, latents=latents)


def train_coopnets(dnet, gnet, data, cfg, resume_state=None, callback=None):
    """The cooperative loop.

    Per iteration: (G0) draw fresh latents and ancestral samples from the
    generator; (D1) Langevin-revise the drafts under the descriptor;
    (G1) take the latents as inferred (when langevin_g.steps == 0) or
    refine them by Langevin inference against the revised drafts;
    (D2) descriptor update against observed data; (G2) generator update(s)
    toward the (revised, latent) pairs.
    """
    if data.shape[0] == 0:
        raise ValueError("no training data")
    if gnet.output_shape != dnet.input_shape:
        raise ValueError(f"generator output {gnet.output_shape} != descriptor input {dnet.input_shape}")
    dnet = dnet.copy()
    gnet = gnet.copy()
    state = resume_state or {}
    rng = _rng_from_state(cfg.seed, state.get("rng_state"))
    start = state.get("iteration", 0)
    metrics = TrainMetrics()
    chain = ChainState()
    for t in range(start, cfg.iterations):
        # G0: a completely new batch of independent examples each iteration
        latents = rng.standard_normal((cfg.n_chains,) + gnet.latent_shape)
        drafts = gnet.forward(latents)
        if cfg.g0_noise:
            drafts = drafts + gnet.noise_std * rng.standard_normal(drafts.shape)
        try:
            revised = langevin_revise(dnet, drafts, cfg.langevin_d, base_seed=_sub_seed(rng))
            if cfg.langevin_g.steps > 0:
                latents = langevin_infer(gnet, revised, latents, cfg.langevin_g,
                                         base_seed=_sub_seed(rng))
        except DivergenceError as e:
            e.args = (f"iteration {t}: {e.args[0]}",)
            raise
        obs = _pick_batch(rng, data, cfg.batch_size)
        # diagnostics reflect the state the gradients were computed at
        gap = _feature_gap(dnet, obs, revised)
        e1, e2 = float(dnet.energy(drafts).mean()), float(dnet.energy(revised).mean())
        grad_d = descriptor_gradient_estimate(dnet, obs, revised)
        dnet.params = params_add(dnet.params, grad_d, cfg.rate(cfg.lr_descriptor, t))
        for _ in range(cfg.g2_inner_steps):
            grad_g = generator_gradient_estimate(gnet, revised, latents)
            gnet.params = params_add(gnet.params, grad_g, cfg.rate(cfg.lr_generator, t))
        recon = gnet.forward(latents)
        chain = ChainState(latents=latents, drafts=drafts, revised=revised,
                           reconstructions=recon)
        metrics.append(iter=t, grad_norm_D=params_norm(grad_d),
                       feature_gap=gap,
                       recon_error=_per_pixel_error(revised, recon),
                       energy_S1=e1, energy_S2=e2,
                       energy_S3=float(dnet.energy(recon).mean()))
        if callback is not None:
            callback(t, dnet, gnet, chain, _pack_state(t + 1, rng))
    return dnet, gnet, metrics, _pack_state(cfg.iterations, rng)


def _pack_state(iteration, rng, chains=None, latents=None):
    return {"iteration": iteration, "rng_state": rng.bit_generator.state,
            "chains": chains, "latents": latents}
