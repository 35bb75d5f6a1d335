"""Cooperative training of a descriptor (energy-based) network and a
generator (latent-variable) network via interleaved Langevin dynamics.

The descriptor defines p(Y) proportional to exp(f(Y)) q(Y) with a Gaussian
reference q; the generator defines Y = g(X) + noise with Gaussian latents.
Training interleaves Langevin revision of generator drafts under the
descriptor with Langevin inference of latents under the generator, then
updates both nets by stochastic gradient ascent.
"""

from .langevin import (DivergenceError, LangevinConfig, kl_decay_oracle,
                       langevin_infer, langevin_infer_masked, langevin_revise)
from .nets import DescriptorNet, GeneratorNet, LayerSpec, ShapeError, init_params
from .training import (ChainState, TrainConfig, TrainMetrics,
                       descriptor_gradient_estimate, generator_gradient_estimate,
                       train_coopnets, train_descriptor, train_generator)
from .data_io import (Checkpoint, CheckpointError, Dataset, load_checkpoint,
                      load_images, make_toy_dataset, save_checkpoint,
                      save_montage)

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "CheckpointError", "ChainState", "Dataset",
    "DescriptorNet", "DivergenceError", "GeneratorNet", "LangevinConfig",
    "LayerSpec", "ShapeError", "TrainConfig", "TrainMetrics",
    "descriptor_gradient_estimate", "generator_gradient_estimate",
    "init_params", "kl_decay_oracle", "langevin_infer",
    "langevin_infer_masked", "langevin_revise", "load_checkpoint",
    "load_images", "make_toy_dataset", "save_checkpoint", "save_montage",
    "train_coopnets", "train_descriptor", "train_generator",
]
