"""Langevin dynamics: signal-space revision under the descriptor and
latent-space inference under the generator posterior, plus the masked
variant used for inpainting.

Every chain in a batch owns its own noise stream, derived as
default_rng([base_seed, chain_key]).  Permuting batch items together with
their chain keys therefore commutes with the dynamics, and runs are
bit-reproducible given (net, input, config, seed).
"""

from dataclasses import dataclass

import numpy as np

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """A chain left the finite range; usually means the step size is too large."""

    def __init__(self, step, what="langevin chain"):
        self.step = step
        super().__init__(
            f"{what} diverged at step {step}: coordinate magnitude exceeded "
            f"{DIVERGENCE_LIMIT:g} or became non-finite (try a smaller step size)")


@dataclass(frozen=True)
class LangevinConfig:
    """Step size, step count, noise temperature, and base RNG seed."""

    step_size: float
    steps: int
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError(f"step size must be >= 0, got {self.step_size}")
        if self.steps < 0:
            raise ValueError(f"step count must be >= 0, got {self.steps}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


# Per-chain noise is pre-generated when the whole trajectory fits in this
# many doubles per chain; otherwise it is drawn step by step.  Both paths
# consume the identical stream, so the cutoff cannot change results.
_PREGEN_BUDGET = 1 << 20


class _NoiseSource:
    def __init__(self, base_seed, chain_keys, steps, item_shape):
        self._gens = [np.random.default_rng([int(base_seed), int(k)]) for k in chain_keys]
        self._shape = tuple(item_shape)
        per_chain = steps * int(np.prod(item_shape)) if steps else 0
        if 0 < per_chain <= _PREGEN_BUDGET:
            self._pre = np.stack([g.standard_normal((steps,) + self._shape) for g in self._gens])
        else:
            self._pre = None

    def draw(self, step):
        if self._pre is not None:
            return self._pre[:, step]
        return np.stack([g.standard_normal(self._shape) for g in self._gens])


def _check_state(state, step, what):
    if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > DIVERGENCE_LIMIT:
        raise DivergenceError(step, what)


def _resolve_keys(n, chain_keys):
    if chain_keys is None:
        return range(n)
    if len(chain_keys) != n:
        raise ValueError(f"{len(chain_keys)} chain keys for {n} chains")
    return chain_keys


def langevin_revise(net, y0, cfg, base_seed=None, chain_keys=None):
    """Revise synthesized signals toward the descriptor's low-energy regions.

    Y <- Y - (d^2/2) [Y/s^2 - df/dY] + d * temperature * U, for cfg.steps steps.
    """
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial signals must be finite")
    seed = cfg.seed if base_seed is None else base_seed
    y = np.array(y0, dtype=np.float64, copy=True)
    if cfg.steps == 0:
        return y
    noise = _NoiseSource(seed, _resolve_keys(y.shape[0], chain_keys), cfg.steps, y.shape[1:])
    half = 0.5 * cfg.step_size ** 2
    for step in range(cfg.steps):
        y -= half * net.energy_gradient(y)
        if cfg.temperature > 0:
            y += cfg.step_size * cfg.temperature * noise.draw(step)
        _check_state(y, step, "langevin revision")
    return y


def _infer(net, y, x0, cfg, base_seed, chain_keys, mask):
    if y.shape[0] != x0.shape[0]:
        raise ValueError(f"batch mismatch: {y.shape[0]} signals vs {x0.shape[0]} latents")
    seed = cfg.seed if base_seed is None else base_seed
    x = np.array(x0, dtype=np.float64, copy=True)
    if cfg.steps == 0:
        return x
    noise = _NoiseSource(seed, _resolve_keys(x.shape[0], chain_keys), cfg.steps, x.shape[1:])
    half = 0.5 * cfg.step_size ** 2
    inv_var = 1.0 / net.noise_std ** 2
    for step in range(cfg.steps):
        residual = y - net.forward(x)
        if mask is not None:
            residual = residual * mask
        grad_x, _ = net.backward(x, residual * inv_var)
        x += half * (grad_x - x)
        if cfg.temperature > 0:
            x += cfg.step_size * cfg.temperature * noise.draw(step)
        _check_state(x, step, "langevin inference")
    return x


def langevin_infer(net, y, x0, cfg, base_seed=None, chain_keys=None):
    """Sample latents from the generator posterior given signals y.

    X <- X + (d^2/2) [(1/sigma^2) J^T (Y - g(X)) - X] + d * temperature * U.
    """
    return _infer(net, y, x0, cfg, base_seed, chain_keys, None)


def langevin_infer_masked(net, y, mask, x0, cfg, base_seed=None, chain_keys=None):
    """langevin_infer with the residual restricted to observed (mask == 1) pixels."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != y.shape[-mask.ndim:]:
        raise ValueError(f"mask shape {mask.shape} does not broadcast over signals {y.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask values must be 0 or 1")
    return _infer(net, y, x0, cfg, base_seed, chain_keys, mask)


def kl_decay_oracle(a, noise_var, target_var, init_var, steps):
    """Closed-form KL trajectory of the linear chain Y <- a Y + sqrt(noise_var) U.

    Propagates the Gaussian marginal variance v <- a^2 v + noise_var and
    returns KL(N(0, v_t) || N(0, target_var)) for t = 0..steps.
    """
    if noise_var <= 0 or target_var <= 0 or init_var <= 0:
        raise ValueError("variances must be > 0")
    if not abs(a) < 1:
        raise ValueError(f"|a| must be < 1 for contraction, got {a}")
    out = np.empty(steps + 1)
    v = float(init_var)
    for t in range(steps + 1):
        r = v / target_var
        out[t] = 0.5 * (r - 1.0 - np.log(r))
        v = a * a * v + noise_var
    return out
