"""Command-line surface: train / sample / inpaint / eval.

Configs are line-oriented ``key = value`` files with ``[section]`` headers
(stdlib configparser).  Every config is fully validated, including layer
shape chain-checking, before any tensor is allocated.  Seeds are always
explicit; a missing seed is a config error, never a timestamp default.

Exit codes: 0 ok, 1 eval-suite failure, 2 usage/config error,
3 numerical divergence.
"""

import argparse
import configparser
import dataclasses
import os
import sys

import numpy as np

from . import evalsuite
from .data_io import (Checkpoint, CheckpointError, load_checkpoint, load_images,
                      make_toy_dataset, save_checkpoint, save_montage)
from .langevin import DivergenceError, LangevinConfig, langevin_infer_masked, langevin_revise
from .nets import DescriptorNet, GeneratorNet, LayerSpec, ShapeError, init_params, resolve_layers
from .training import (ChainState, TrainConfig, train_coopnets,
                       train_descriptor, train_generator)

EXIT_OK = 0
EXIT_EVAL_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    """Invalid or incomplete run configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

_NONLINEARITIES = ("relu", "tanh", "identity")


def parse_layer(text):
    """One layer from a token string.

    Grammar:
      conv   OUT KxK [stride S] [pad P] NL
      deconv OUT KxK [up U] [pad P] NL
      fc     OUT [shape CxHxW] NL
    """
    toks = text.split()
    if len(toks) < 3:
        raise ConfigError(f"layer {text!r}: expected at least 'kind out nonlinearity'")
    kind = toks[0]
    nl = toks[-1]
    if nl not in _NONLINEARITIES:
        raise ConfigError(f"layer {text!r}: unknown nonlinearity {nl!r}")
    try:
        out = int(toks[1])
    except ValueError:
        raise ConfigError(f"layer {text!r}: bad output count {toks[1]!r}")
    opts = toks[2:-1]
    if kind == "fc":
        shape = ()
        i = 0
        while i < len(opts):
            if opts[i] == "shape" and i + 1 < len(opts):
                shape = tuple(int(v) for v in opts[i + 1].split("x"))
                i += 2
            else:
                raise ConfigError(f"layer {text!r}: unexpected token {opts[i]!r}")
        return LayerSpec.fc(out, nonlinearity=nl, out_shape=shape)
    if kind not in ("conv", "deconv"):
        raise ConfigError(f"layer {text!r}: unknown kind {kind!r}")
    if not opts or "x" not in opts[0]:
        raise ConfigError(f"layer {text!r}: missing KxK kernel size")
    kh, kw = (int(v) for v in opts[0].split("x"))
    if kh != kw:
        raise ConfigError(f"layer {text!r}: only square kernels are supported")
    stride = up = 1
    pad = -1
    i = 1
    while i < len(opts):
        key = opts[i]
        if key not in ("stride", "up", "pad") or i + 1 >= len(opts):
            raise ConfigError(f"layer {text!r}: unexpected token {key!r}")
        val = int(opts[i + 1])
        if key == "stride":
            stride = val
        elif key == "up":
            up = val
        else:
            pad = val
        i += 2
    if kind == "conv":
        if up != 1:
            raise ConfigError(f"layer {text!r}: 'up' is a deconv option")
        return LayerSpec.conv(out, kh, stride=stride,
                              padding=0 if pad < 0 else pad, nonlinearity=nl)
    if stride != 1:
        raise ConfigError(f"layer {text!r}: 'stride' is a conv option")
    return LayerSpec.deconv(out, kh, upsample=up, padding=pad, nonlinearity=nl)


def parse_layers(text):
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if not parts:
        raise ConfigError("empty layer list")
    return [parse_layer(p) for p in parts]


def _get(cp, section, key, cast=str, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"[{section}] is missing required key {key!r}")
        return default
    raw = cp.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected {cast.__name__}")


def _matrix(text):
    return [[float(v) for v in row.split()] for row in text.split(";") if row.strip()]


class RunConfig:
    """Everything a training run needs, chain-checked at load time."""

    def __init__(self, cp, path="<config>"):
        for sec in ("experiment", "dataset", "descriptor", "generator", "training"):
            if not cp.has_section(sec):
                raise ConfigError(f"{path}: missing [{sec}] section")
        self.name = _get(cp, "experiment", "name", required=True)
        self.output_dir = _get(cp, "experiment", "output_dir", default="runs/" + self.name)
        self.montage_period = _get(cp, "experiment", "montage_period", int, 0)
        self.checkpoint_period = _get(cp, "experiment", "checkpoint_period", int, 0)

        self.dataset_kind = _get(cp, "dataset", "kind", required=True)
        self.dataset_path = _get(cp, "dataset", "path")
        self.dataset_size = _get(cp, "dataset", "size", int, 0)
        self.channels = _get(cp, "dataset", "channels", int, 1)
        self.dataset_n = _get(cp, "dataset", "n", int, 0)
        self.dataset_seed = _get(cp, "dataset", "seed", int, required=True)
        self.dataset_params = {}
        if self.dataset_kind == "gaussian_mixture_2d":
            means = _get(cp, "dataset", "means", _matrix, required=True)
            self.dataset_params = {"means": means,
                                   "stds": _get(cp, "dataset", "stds", float, required=True)}
        elif self.dataset_kind == "linear_factor":
            self.dataset_params = {"latent_dim": _get(cp, "dataset", "latent_dim", int, required=True),
                                   "dim": _get(cp, "dataset", "dim", int, required=True),
                                   "sigma": _get(cp, "dataset", "sigma", float, required=True)}
        elif self.dataset_kind == "texture_patch":
            self.dataset_params = {"source_path": _get(cp, "dataset", "source", required=True),
                                   "patch": _get(cp, "dataset", "patch", int, required=True)}
        elif self.dataset_kind != "images":
            raise ConfigError(f"[dataset] kind = {self.dataset_kind!r} is not one of "
                              "images, gaussian_mixture_2d, linear_factor, texture_patch")

        self.descriptor_layers = parse_layers(_get(cp, "descriptor", "layers", required=True))
        self.ref_std = _get(cp, "descriptor", "ref_std", float, required=True)
        self.d_init_std = _get(cp, "descriptor", "init_std", float, 0.01)
        self.d_init_seed = _get(cp, "descriptor", "init_seed", int, required=True)

        self.generator_layers = parse_layers(_get(cp, "generator", "layers", required=True))
        latent = _get(cp, "generator", "latent", required=True)
        try:
            self.latent_shape = tuple(int(v) for v in latent.split("x"))
        except ValueError:
            raise ConfigError(f"[generator] latent = {latent!r}: expected CxHxW")
        if len(self.latent_shape) != 3:
            raise ConfigError(f"[generator] latent = {latent!r}: expected 3 dimensions")
        self.noise_std = _get(cp, "generator", "noise_std", float, required=True)
        self.g_init_std = _get(cp, "generator", "init_std", float, 0.01)
        self.g_init_seed = _get(cp, "generator", "init_seed", int, required=True)

        ld = LangevinConfig(_get(cp, "training", "langevin_d_step", float, required=True),
                            _get(cp, "training", "langevin_d_steps", int, required=True),
                            temperature=_get(cp, "training", "temperature", float, 1.0))
        lg = LangevinConfig(_get(cp, "training", "langevin_g_step", float, 0.1),
                            _get(cp, "training", "langevin_g_steps", int, 0),
                            temperature=_get(cp, "training", "temperature", float, 1.0))
        try:
            self.train = TrainConfig(
                iterations=_get(cp, "training", "iterations", int, required=True),
                lr_descriptor=_get(cp, "training", "lr_descriptor", float, 0.01),
                lr_generator=_get(cp, "training", "lr_generator", float, 1e-4),
                lr_decay=_get(cp, "training", "lr_decay", str, "constant"),
                n_chains=_get(cp, "training", "n_chains", int, 64),
                langevin_d=ld, langevin_g=lg,
                g2_inner_steps=_get(cp, "training", "g2_inner_steps", int, 1),
                batch_size=_get(cp, "training", "batch_size", int, 64),
                g0_noise=_get(cp, "training", "g0_noise", bool, True),
                seed=_get(cp, "training", "seed", int, required=True))
        except ValueError as e:
            raise ConfigError(f"[training]: {e}")

        self.input_shape = self._chain_check(path)

    def _chain_check(self, path):
        """Resolve every layer shape; raises before any tensor is built."""
        if self.dataset_kind == "gaussian_mixture_2d":
            input_shape = (2, 1, 1)
        elif self.dataset_kind == "linear_factor":
            input_shape = (self.dataset_params["dim"], 1, 1)
        else:
            if self.dataset_size < 1:
                raise ConfigError(f"{path}: [dataset] size must be >= 1 for image data")
            input_shape = (self.channels, self.dataset_size, self.dataset_size)
        try:
            resolve_layers(self.descriptor_layers, input_shape)
        except (ShapeError, ValueError) as e:
            raise ConfigError(f"{path}: descriptor layers do not chain from {input_shape}: {e}")
        try:
            _, out = resolve_layers(self.generator_layers, self.latent_shape)
        except (ShapeError, ValueError) as e:
            raise ConfigError(f"{path}: generator layers do not chain from latent "
                              f"{self.latent_shape}: {e}")
        if out != input_shape:
            raise ConfigError(f"{path}: generator output {out} != data shape {input_shape}")
        return input_shape

    def build_nets(self):
        dnet = DescriptorNet(self.descriptor_layers, self.input_shape, ref_std=self.ref_std)
        dnet.params = init_params(dnet.layers, "gaussian", self.d_init_std,
                                  np.random.default_rng(self.d_init_seed))
        gnet = GeneratorNet(self.generator_layers, self.latent_shape, noise_std=self.noise_std)
        gnet.params = init_params(gnet.layers, "gaussian", self.g_init_std,
                                  np.random.default_rng(self.g_init_seed))
        return dnet, gnet

    def load_data(self):
        if self.dataset_kind == "images":
            if not self.dataset_path:
                raise ConfigError("[dataset] kind = images needs path")
            return load_images(self.dataset_path, channels=self.channels,
                               target_size=self.dataset_size)
        params = dict(self.dataset_params)
        if self.dataset_kind == "texture_patch":
            src = load_images(os.path.dirname(params["source_path"]) or ".",
                              channels=self.channels, target_size=self.dataset_size)
            params = {"source": src.examples[0], "patch": params["patch"]}
        if self.dataset_n < 1:
            raise ConfigError("[dataset] n must be >= 1 for synthetic data")
        return make_toy_dataset(self.dataset_kind, params, self.dataset_n,
                                seed=self.dataset_seed)


def load_config(path):
    # '#' only: ';' separates layers inside values
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as fp:
            cp.read_file(fp)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}")
    return RunConfig(cp, path=path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _maybe_montage(batch, stem, cols=8):
    """Montages only make sense for 1- or 3-channel spatial data."""
    if batch is None or batch.shape[1] not in (1, 3) or batch.shape[2] < 2:
        return
    ext = ".pgm" if batch.shape[1] == 1 else ".png"
    save_montage(batch, min(cols, batch.shape[0]), stem + ext)


def cmd_train(args):
    cfg = load_config(args.config)
    if args.iterations is not None:
        cfg.train = dataclasses.replace(cfg.train, iterations=args.iterations)
    out_dir = args.output or cfg.output_dir
    dnet, gnet = cfg.build_nets()
    data = cfg.load_data().examples
    resume_state = None
    start = 0
    if args.resume:
        ck = load_checkpoint(args.resume)
        dnet, gnet = ck.descriptor or dnet, ck.generator or gnet
        resume_state = {"iteration": ck.iteration, "rng_state": ck.rng_state,
                        "chains": ck.chain_state.revised, "latents": ck.chain_state.latents}
        start = ck.iteration
    os.makedirs(out_dir, exist_ok=True)

    def cb(t, dn, gn, chain, state):
        step = t + 1
        if cfg.montage_period and step % cfg.montage_period == 0:
            _maybe_montage(chain.drafts, os.path.join(out_dir, f"S1_{step:06d}"))
            _maybe_montage(chain.revised, os.path.join(out_dir, f"S2_{step:06d}"))
            _maybe_montage(chain.reconstructions, os.path.join(out_dir, f"S3_{step:06d}"))
        if cfg.checkpoint_period and step % cfg.checkpoint_period == 0:
            save_checkpoint(Checkpoint(iteration=step, descriptor=dn, generator=gn,
                                       train_config=cfg.train,
                                       rng_state=state["rng_state"], chain_state=chain),
                            os.path.join(out_dir, f"ckpt_{step:06d}.ckpt"))

    if args.mode == "coopnets":
        dnet, gnet, metrics, state = train_coopnets(dnet, gnet, data, cfg.train,
                                                    resume_state=resume_state, callback=cb)
        chain = None
    elif args.mode == "descriptor":
        dnet, chain, metrics, state = train_descriptor(dnet, data, cfg.train,
                                                       resume_state=resume_state, callback=cb)
        gnet = None
    else:
        gnet, latents, metrics, state = train_generator(gnet, data, cfg.train,
                                                        resume_state=resume_state, callback=cb)
        dnet = None
        chain = None
    with open(os.path.join(out_dir, "metrics.csv"), "a" if start else "w") as fp:
        if start == 0:
            fp.write(metrics.to_csv_bytes().decode())
        else:
            for line in metrics.to_csv_bytes().decode().splitlines(True)[1:]:
                fp.write(line)
    save_checkpoint(Checkpoint(iteration=cfg.train.iterations, descriptor=dnet,
                               generator=gnet, train_config=cfg.train,
                               rng_state=state["rng_state"],
                               chain_state=chain if args.mode == "descriptor"
                               else ChainState(latents=state.get("latents"))),
                    os.path.join(out_dir, "final.ckpt"))
    print(f"trained {args.mode} for {cfg.train.iterations - start} iterations -> {out_dir}")
    return EXIT_OK


def cmd_sample(args):
    try:
        ck = load_checkpoint(args.checkpoint)
    except CheckpointError as e:
        print(f"error: bad checkpoint: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if ck.generator is None:
        print("error: checkpoint has no generator", file=sys.stderr)
        return EXIT_CONFIG
    rng = np.random.default_rng(args.seed)
    latents = rng.standard_normal((args.count,) + ck.generator.latent_shape)
    drafts = ck.generator.forward(latents)
    os.makedirs(args.out, exist_ok=True)
    _maybe_montage(drafts, os.path.join(args.out, "drafts"))
    if args.revise_steps > 0:
        if ck.descriptor is None:
            print("error: revision requested but checkpoint has no descriptor",
                  file=sys.stderr)
            return EXIT_CONFIG
        step = args.step_size if args.step_size is not None \
            else ck.train_config.langevin_d.step_size
        revised = langevin_revise(ck.descriptor, drafts,
                                  LangevinConfig(step, args.revise_steps,
                                                 temperature=0.0, seed=args.seed))
        _maybe_montage(revised, os.path.join(args.out, "revised"))
        np.save(os.path.join(args.out, "revised.npy"), revised)
    np.save(os.path.join(args.out, "drafts.npy"), drafts)
    print(f"sampled {args.count} -> {args.out}")
    return EXIT_OK


def cmd_inpaint(args):
    try:
        ck = load_checkpoint(args.checkpoint)
    except CheckpointError as e:
        print(f"error: bad checkpoint: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if ck.generator is None:
        print("error: checkpoint has no generator", file=sys.stderr)
        return EXIT_CONFIG
    gnet = ck.generator
    data = load_images(args.images, channels=gnet.output_shape[0],
                       target_size=gnet.output_shape[1]).examples
    c, h, w = gnet.output_shape
    m = args.mask_size
    if m > h or m > w:
        print(f"error: mask {m} exceeds image {h}x{w}", file=sys.stderr)
        return EXIT_CONFIG
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    completions = np.empty_like(data)
    for i, y in enumerate(data):
        mask = np.ones((1, c, h, w))
        if m > 0:
            top = int(rng.integers(0, h - m + 1))
            left = int(rng.integers(0, w - m + 1))
            mask[:, :, top:top + m, left:left + m] = 0.0
        x0 = rng.standard_normal((1,) + gnet.latent_shape)
        x = langevin_infer_masked(gnet, y[None], mask, x0,
                                  LangevinConfig(args.step_size, args.steps,
                                                 seed=int(rng.integers(1 << 62))))
        completion = gnet.forward(x)[0]
        completions[i] = completion
        occluded = mask[0] == 0.0
        if occluded.any():
            err = float(np.abs(y - completion)[occluded].mean())
            fill = (y * mask[0]).sum() / mask[0].sum()
            base = float(np.abs(y - fill)[occluded].mean())
        else:
            err = base = 0.0
        rows.append((i, err, base))
    _maybe_montage(completions, os.path.join(args.out, "completions"))
    with open(os.path.join(args.out, "recovery.csv"), "w") as fp:
        fp.write("image,recovery_error,mean_fill_error\n")
        for i, err, base in rows:
            fp.write("%d,%s,%s\n" % (i, repr(err), repr(base)))
    mean_err = float(np.mean([r[1] for r in rows]))
    mean_base = float(np.mean([r[2] for r in rows]))
    print(f"inpainted {len(rows)} images: recovery {mean_err:.4f} "
          f"vs mean-fill {mean_base:.4f} -> {args.out}")
    return EXIT_OK


def cmd_eval(args):
    results = evalsuite.run_suite(args.suite)
    report = evalsuite.report_csv(results)
    if args.out:
        with open(args.out, "wb") as fp:
            fp.write(report)
    sys.stdout.write(report.decode())
    failing = [r.name for r in results if not r.passed]
    if failing:
        print(f"FAILED: {', '.join(failing)}", file=sys.stderr)
        return EXIT_EVAL_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="coopnets",
                                description="Cooperative descriptor/generator training")
    p.add_argument("--threads", type=int, default=0,
                   help="cap compiled-kernel worker threads (0 = library default)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training loop from a config preset")
    t.add_argument("config")
    t.add_argument("--mode", choices=("coopnets", "descriptor", "generator"),
                   default="coopnets")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--iterations", type=int, default=None,
                   help="override [training] iterations")
    t.add_argument("--output", help="override [experiment] output_dir")

    s = sub.add_parser("sample", help="draw generator samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--revise-steps", type=int, default=0)
    s.add_argument("--step-size", type=float, default=None)

    i = sub.add_parser("inpaint", help="recover occluded regions via masked inference")
    i.add_argument("checkpoint")
    i.add_argument("--images", required=True)
    i.add_argument("--mask-size", type=int, required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--steps", type=int, default=1000)
    i.add_argument("--step-size", type=float, default=0.1)
    i.add_argument("--seed", type=int, required=True)

    e = sub.add_parser("eval", help="run the oracle or trend acceptance suite")
    e.add_argument("--suite", choices=evalsuite.SUITES, required=True)
    e.add_argument("--out", help="write the pass/fail table here as CSV")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads > 0:
        try:
            import numba
            numba.set_num_threads(args.threads)
        except ImportError:
            pass
    handler = {"train": cmd_train, "sample": cmd_sample,
               "inpaint": cmd_inpaint, "eval": cmd_eval}[args.command]
    try:
        return handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
