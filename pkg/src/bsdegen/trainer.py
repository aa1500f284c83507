"""End-to-end training loop for both strategies.

Each iteration draws a data batch xi, builds per-sample noise, simulates the
forward paths, rolls the backward process out to its terminal value on
recording tapes, computes the kernel loss, and applies one RMSprop step.

Two strategies:
  decoder_only     zeta ~ N(0, I) seeds the forward process; loss is MMD^2.
  encoder_decoder  a jointly-trained linear map encodes the noise-mixed
                   image alpha*xi + (1-alpha)*eps into zeta; loss is
                   MMD^2 + beta * MSE with generated/target rows paired by
                   batch index.

Determinism contract: all randomness is keyed off the config seed.
Parameter init uses streams (seed, INIT, k); the epoch shuffle uses
(seed, SHUFFLE); sample slot k of iteration i uses (seed, SAMPLE, i, k) and
consumes, in order, its input noise (zeta or eps), its Brownian increments,
then its dropout masks (y0 net first, then the control net per step). The
batch is processed in fixed chunks of 32 samples whose results are reduced
in chunk order, so losses and gradients are bit-identical for any worker
count; workers only spread chunks over threads.

The per-iteration log is flushed to two CSVs: ``loss.csv`` with
"iteration,loss" (byte-reproducible given the seed) and ``runlog.csv`` with
"iteration,loss,seconds" carrying wall-clock timings.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Tape
from .bsde import GenModel, GeneratorSpec, generate_batch, make_z_provider, rollout_y
from .bsde import model_configs, model_from_checkpoint, model_param_entries
from .checkpoint import load_checkpoint, save_checkpoint
from .data import batch_iter
from .mmd import KernelSpec, mmd2_value, training_loss
from .rng import Rng, RowStreams, derive, derive_many
from .sde import ForwardSpec, TimeGrid, euler_forward_x

CHUNK = 32

# substream domain tags
_INIT = 0x01
_SHUFFLE = 0x02
_SAMPLE = 0x03


@dataclass
class TrainConfig:
    d_x: int = 16
    d_w: int = None
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(1.0, 20))
    hidden: tuple = (256, 256, 256)
    dropout_p: float = 0.2
    forward_spec: ForwardSpec = None
    generator_spec: GeneratorSpec = None
    kernel: KernelSpec = None
    strategy: str = "decoder_only"
    alpha: float = 0.5
    beta: float = 1.0
    lr: float = 1e-4
    decay: float = 0.99
    eps: float = 1e-8
    batch_size: int = 128
    iterations: int = 500
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.strategy not in ("decoder_only", "encoder_decoder"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.d_w is None:
            self.d_w = self.d_x
        if self.strategy == "encoder_decoder":
            if not 0.0 < self.alpha <= 1.0:
                raise ValueError("alpha must lie in (0, 1]")
            if self.beta < 0:
                raise ValueError("beta must be >= 0")


@dataclass
class RunLog:
    records: list = field(default_factory=list)  # (iteration, loss, seconds)

    def losses(self):
        return [r[1] for r in self.records]

    @staticmethod
    def loss_row(iteration, loss):
        return f"{iteration},{loss!r}\n"

    def loss_csv(self):
        return "iteration,loss\n" + "".join(
            self.loss_row(i, l) for i, l, _ in self.records
        )

    def runlog_csv(self):
        return "iteration,loss,seconds\n" + "".join(
            f"{i},{l!r},{s:.3f}\n" for i, l, s in self.records
        )


class Trainer:
    """Owns the model parameters, optimizer state, and draw streams."""

    def __init__(self, config, dataset):
        if dataset.count < config.batch_size:
            raise ValueError(
                f"dataset holds {dataset.count} images, batch needs {config.batch_size}"
            )
        self.config = config
        self.dataset = dataset
        d_x, d_y, d_w = config.d_x, dataset.dim, config.d_w
        forward_spec = config.forward_spec or ForwardSpec.standard_ou(d_x)
        if forward_spec.noise_dim(d_x) != d_w:
            raise ValueError(
                f"d_w={d_w} does not match the forward spec's noise dimension "
                f"{forward_spec.noise_dim(d_x)}"
            )
        generator_spec = config.generator_spec or GeneratorSpec.default(d_x, d_y)
        self.kernel = config.kernel or KernelSpec.default_multiscale(d_y)
        y0_config = nn.MLPConfig(d_x, d_y, tuple(config.hidden), config.dropout_p)
        z_config = nn.MLPConfig(1 + d_x, d_y * d_w, tuple(config.hidden), config.dropout_p)
        self.model = GenModel(
            y0_config,
            nn.init_mlp(y0_config, Rng(derive(config.seed, _INIT, 1))),
            z_config,
            nn.init_mlp(z_config, Rng(derive(config.seed, _INIT, 2))),
            forward_spec,
            generator_spec,
            config.grid,
            d_x,
            d_y,
            d_w,
        )
        self.encoder = None
        if config.strategy == "encoder_decoder":
            enc_rng = Rng(derive(config.seed, _INIT, 3))
            std = np.sqrt(2.0 / (d_y + d_x))
            self.encoder = [enc_rng.normal_matrix(d_x, d_y) * std, np.zeros(d_x)]
        self.opt_state = nn.RMSPropState.zeros_like(self._flat_params())
        self._batches = batch_iter(dataset, config.batch_size, Rng(derive(config.seed, _SHUFFLE)))
        self.iteration = 0

    # -- parameter bookkeeping -------------------------------------------

    def _flat_params(self):
        flat = self.model.y0_params.tensors() + self.model.z_params.tensors()
        if self.encoder is not None:
            flat += list(self.encoder)
        return flat

    def _set_flat_params(self, flat):
        n_y0 = 2 * len(self.model.y0_params.weights)
        n_z = 2 * len(self.model.z_params.weights)
        self.model.y0_params = nn.MLPParams.from_tensors(flat[:n_y0])
        self.model.z_params = nn.MLPParams.from_tensors(flat[n_y0 : n_y0 + n_z])
        if self.encoder is not None:
            self.encoder = list(flat[n_y0 + n_z :])

    # -- one iteration ------------------------------------------------------

    def _chunk_forward(self, sl, slot_seeds, cursor, zeta, xi_noisy, x_path, dw):
        cfg = self.config
        streams = RowStreams(slot_seeds[sl], cursor)
        tape = Tape()
        y0_layers, y0_leaves = nn.bind_mlp(self.model.y0_params, tape)
        z_layers, z_leaves = nn.bind_mlp(self.model.z_params, tape)
        leaves = y0_leaves + z_leaves
        if self.encoder is not None:
            enc_w = tape.leaf(self.encoder[0], "encoder weight")
            enc_b = tape.leaf(self.encoder[1], "encoder bias")
            leaves += [enc_w, enc_b]
            zeta_node = tape.affine(enc_w, enc_b, tape.const(xi_noisy[sl], "noisy targets"))
        else:
            zeta_node = tape.const(zeta[sl], "zeta")
        y0 = nn.mlp_forward(
            self.model.y0_config, y0_layers, zeta_node, tape, "train", streams
        )
        provider = make_z_provider(self.model, tape, z_layers, "train", streams)
        y_t = rollout_y(
            y0, provider, x_path[sl], dw[sl], self.model.generator_spec, cfg.grid, tape
        )
        return tape, y_t, leaves

    def step(self):
        """Run one training iteration; returns (loss, flat gradient list)."""
        cfg = self.config
        self.iteration += 1
        m = cfg.batch_size
        d_y = self.model.d_y
        idx = next(self._batches)
        xi = self.dataset.pixels[idx]

        slot_seeds = derive_many(cfg.seed, _SAMPLE, self.iteration, count=m)
        streams = RowStreams(slot_seeds)
        xi_noisy = None
        if self.encoder is not None:
            eps = streams.normals(d_y)
            xi_noisy = cfg.alpha * xi + (1.0 - cfg.alpha) * eps
            zeta = xi_noisy @ self.encoder[0].T + self.encoder[1]
        else:
            zeta = streams.normals(self.model.d_x)
        dw = streams.normals(cfg.grid.steps * self.model.d_w).reshape(
            m, cfg.grid.steps, self.model.d_w
        ) * np.sqrt(cfg.grid.dt)
        x_path = euler_forward_x(self.model.forward_spec, zeta, dw, cfg.grid)
        cursor = streams.cursor

        slices = [slice(lo, min(lo + CHUNK, m)) for lo in range(0, m, CHUNK)]
        run = lambda sl: self._chunk_forward(
            sl, slot_seeds, cursor, zeta, xi_noisy, x_path, dw
        )
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                chunks = list(pool.map(run, slices))
        else:
            chunks = [run(sl) for sl in slices]

        loss_tape = Tape()
        y_gen = loss_tape.leaf(
            np.concatenate([y_t.value for _, y_t, _ in chunks], axis=0), "generated"
        )
        beta = cfg.beta if self.encoder is not None else 0.0
        pairing = np.arange(m) if beta > 0 else None
        loss_node = training_loss(y_gen, xi, self.kernel, loss_tape, beta, pairing)
        loss = float(loss_node.value)
        if not np.isfinite(loss):
            raise RuntimeError(f"training diverged: non-finite loss at iteration {self.iteration}")
        d_y_gen = loss_tape.backward(loss_node)[y_gen.id]

        grads = None
        for sl, (tape, y_t, leaves) in zip(slices, chunks):
            gmap = tape.backward_from(y_t, d_y_gen[sl])
            flat = [gmap[leaf.id] for leaf in leaves]
            grads = flat if grads is None else [a + b for a, b in zip(grads, flat)]

        new_params, self.opt_state = nn.rmsprop_step(
            self._flat_params(), grads, self.opt_state, cfg.lr, cfg.decay, cfg.eps
        )
        self._set_flat_params(new_params)
        return loss, grads

    # -- full run -------------------------------------------------------------

    def run(self, loss_path=None, runlog_path=None):
        """Train for config.iterations, flushing CSV logs each iteration."""
        log = RunLog()
        loss_f = open(loss_path, "w") if loss_path else None
        runlog_f = open(runlog_path, "w") if runlog_path else None
        try:
            if loss_f:
                loss_f.write("iteration,loss\n")
                loss_f.flush()
            if runlog_f:
                runlog_f.write("iteration,loss,seconds\n")
                runlog_f.flush()
            t0 = time.perf_counter()
            for _ in range(self.config.iterations):
                loss, _ = self.step()
                seconds = time.perf_counter() - t0
                log.records.append((self.iteration, loss, seconds))
                if loss_f:
                    loss_f.write(RunLog.loss_row(self.iteration, loss))
                    loss_f.flush()
                if runlog_f:
                    runlog_f.write(f"{self.iteration},{loss!r},{seconds:.3f}\n")
                    runlog_f.flush()
        finally:
            if loss_f:
                loss_f.close()
            if runlog_f:
                runlog_f.close()
        return log

    def to_checkpoint(self, log=None):
        cfg = self.config
        configs = model_configs(self.model)
        configs["image"] = {"rows": self.dataset.rows, "cols": self.dataset.cols}
        configs["kernel"] = {"family": self.kernel.family, "bandwidths": list(self.kernel.bandwidths)}
        configs["strategy"] = cfg.strategy
        configs["alpha"] = cfg.alpha
        configs["beta"] = cfg.beta
        train_meta = {
            "seed": cfg.seed,
            "iterations_run": self.iteration,
            "batch_size": cfg.batch_size,
            "lr": cfg.lr,
            "decay": cfg.decay,
            "eps": cfg.eps,
            "final_loss": (log.records[-1][1] if log and log.records else None),
        }
        entries = model_param_entries(self.model)
        if self.encoder is not None:
            entries += [("enc.w", self.encoder[0]), ("enc.b", self.encoder[1])]
        return save_checkpoint(configs, train_meta, entries)


def train(config, dataset, loss_path=None, runlog_path=None):
    """Train per config; returns (checkpoint bytes, RunLog)."""
    trainer = Trainer(config, dataset)
    log = trainer.run(loss_path, runlog_path)
    return trainer.to_checkpoint(log), log


def kernel_from_configs(configs):
    if "kernel" in configs:
        k = configs["kernel"]
        return KernelSpec(family=k["family"], bandwidths=tuple(k["bandwidths"]))
    return None


def evaluate(checkpoint_bytes, dataset, n, rng, kernel=None):
    """Unbiased MMD^2 between n generated samples and n dataset images."""
    if n < 2:
        raise ValueError("evaluation needs n >= 2 samples")
    if dataset.count < n:
        raise ValueError(f"dataset holds {dataset.count} images, need {n}")
    configs, _, params = load_checkpoint(checkpoint_bytes)
    model = model_from_checkpoint(configs, params)
    if model.d_y != dataset.dim:
        raise ValueError(f"model emits dim {model.d_y}, dataset images have {dataset.dim}")
    kernel = kernel or kernel_from_configs(configs) or KernelSpec.default_multiscale(model.d_y)
    real = dataset.pixels[rng.permutation(dataset.count)[:n]]
    generated = generate_batch(model, n, rng)
    return mmd2_value(generated, real, kernel)
