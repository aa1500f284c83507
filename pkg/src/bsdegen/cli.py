"""Command-line front end.

Subcommands: train, generate, eval, simulate, verify. Options can come from
a flat UTF-8 ``key=value`` config file (--config); explicit flags override
file values, and unknown keys in the file are rejected up front. The
BSDEGEN_WORKERS env var supplies --workers when the flag is absent.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np


def _parse_ints(text):
    return tuple(int(p) for p in str(text).split(",") if p.strip())


def _parse_floats(text):
    return tuple(float(p) for p in str(text).split(",") if p.strip())


def _parse_shape(text):
    parts = str(text).lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected ROWSxCOLS, got {text!r}")
    return int(parts[0]), int(parts[1])


_TRAIN_OPTS = {
    "data": (str, None, "IDX image file to train on"),
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "master seed"),
    "workers": (int, None, "thread count for batch chunks"),
    "iterations": (int, 500, "training iterations"),
    "batch_size": (int, 128, "samples per iteration"),
    "lr": (float, 1e-4, "RMSprop learning rate"),
    "decay": (float, 0.99, "RMSprop mean-square decay"),
    "eps": (float, 1e-8, "RMSprop epsilon"),
    "strategy": (str, "decoder_only", "decoder_only or encoder_decoder"),
    "alpha": (float, 0.5, "noise mix weight (encoder_decoder)"),
    "beta": (float, 1.0, "MSE weight (encoder_decoder)"),
    "dx": (int, 16, "forward state dimension"),
    "dw": (int, None, "noise dimension (defaults to dx)"),
    "grid_n": (int, 20, "time steps"),
    "grid_t": (float, 1.0, "time horizon"),
    "hidden": (_parse_ints, (256, 256, 256), "hidden widths, comma separated"),
    "dropout": (float, 0.2, "dropout probability"),
    "kernel": (str, "multiscale", "kernel family: multiscale or rbf"),
    "bandwidths": (_parse_floats, None, "kernel bandwidths (default: ladder from dim)"),
    "gen_b": (float, -0.5, "diagonal coefficient of the y-coupling matrix"),
    "gen_kappa": (float, 0.1, "weight of the |z| drift term"),
    "subset": (int, None, "train on the first N images only"),
    "downsample": (_parse_shape, None, "resample images to ROWSxCOLS"),
}

_GENERATE_OPTS = {
    "checkpoint": (str, None, "checkpoint file"),
    "count": (int, 16, "number of images"),
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "sampling seed"),
}

_EVAL_OPTS = {
    "checkpoint": (str, None, "checkpoint file"),
    "data": (str, None, "IDX image file with held-out images"),
    "count": (int, 256, "samples per side"),
    "seed": (int, 0, "sampling seed"),
    "subset": (int, None, "restrict dataset to the first N images"),
    "downsample": (_parse_shape, None, "resample images to ROWSxCOLS"),
}

_SIMULATE_OPTS = {
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "path seed"),
    "dx": (int, 16, "state dimension"),
    "kind": (str, "ou", "forward kind: ou or brownian"),
    "grid_n": (int, 20, "time steps"),
    "grid_t": (float, 1.0, "time horizon"),
    "paths": (int, 1, "number of paths"),
}

_VERIFY_OPTS = {
    "quick": (bool, False, "smaller Monte Carlo sizes"),
}

_REQUIRED = {
    "train": ("data",),
    "generate": ("checkpoint",),
    "eval": ("checkpoint", "data"),
    "simulate": (),
    "verify": (),
}


def _add_opts(sub, opts):
    for name, (conv, _default, help_text) in opts.items():
        flag = "--" + name.replace("_", "-")
        if conv is bool:
            sub.add_argument(flag, action="store_const", const=True, default=None, help=help_text)
        else:
            sub.add_argument(flag, type=str, default=None, help=help_text)
    sub.add_argument("--config", type=str, default=None, help="key=value config file")


def _read_config_file(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def _resolve(args, opts, command):
    file_vals = {}
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        file_vals = _read_config_file(args.config)
        unknown = sorted(set(file_vals) - set(opts))
        if unknown:
            raise SystemExit2(f"unknown config keys for {command}: {', '.join(unknown)}")
    final = {}
    for name, (conv, default, _help) in opts.items():
        raw = getattr(args, name)
        if raw is None and name in file_vals:
            raw = file_vals[name]
        if raw is None:
            final[name] = default
        elif conv is bool:
            final[name] = raw if isinstance(raw, bool) else raw.strip().lower() in ("1", "true", "yes")
        else:
            final[name] = conv(raw)
    if "workers" in final and final["workers"] is None:
        final["workers"] = int(os.environ.get("BSDEGEN_WORKERS", "1"))
    for name in _REQUIRED[command]:
        if final[name] is None:
            raise SystemExit2(f"{command} requires --{name.replace('_', '-')}")
    return final


class SystemExit2(Exception):
    """Usage error (exit code 2)."""


def _load_dataset(path, subset_n, downsample_rc):
    from .data import downsample_mean, parse_idx_images, subset

    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    ds = parse_idx_images(p.read_bytes())
    if subset_n is not None:
        ds = subset(ds, subset_n)
    if downsample_rc is not None:
        ds = downsample_mean(ds, *downsample_rc)
    return ds


def _cmd_train(opt):
    from .bsde import GeneratorSpec
    from .mmd import KernelSpec
    from .sde import TimeGrid
    from .trainer import TrainConfig, Trainer

    out = Path(opt["out"])
    out.mkdir(parents=True, exist_ok=True)
    ds = _load_dataset(opt["data"], opt["subset"], opt["downsample"])
    kernel = None
    if opt["bandwidths"] is not None:
        kernel = KernelSpec(opt["kernel"], opt["bandwidths"])
    elif opt["kernel"] == "rbf":
        kernel = KernelSpec("rbf", (np.sqrt(ds.dim) / 2.0,))
    gen_spec = GeneratorSpec.default(
        opt["dx"], ds.dim, b_diag=opt["gen_b"], kappa=opt["gen_kappa"]
    )
    config = TrainConfig(
        d_x=opt["dx"],
        d_w=opt["dw"],
        grid=TimeGrid(opt["grid_t"], opt["grid_n"]),
        hidden=opt["hidden"],
        dropout_p=opt["dropout"],
        generator_spec=gen_spec,
        kernel=kernel,
        strategy=opt["strategy"],
        alpha=opt["alpha"],
        beta=opt["beta"],
        lr=opt["lr"],
        decay=opt["decay"],
        eps=opt["eps"],
        batch_size=opt["batch_size"],
        iterations=opt["iterations"],
        seed=opt["seed"],
        workers=opt["workers"],
    )
    trainer = Trainer(config, ds)
    log = trainer.run(loss_path=out / "loss.csv", runlog_path=out / "runlog.csv")
    blob = trainer.to_checkpoint(log)
    (out / "checkpoint.bsdg").write_bytes(blob)
    if log.records:
        print(f"trained {opt['iterations']} iterations, final loss {log.records[-1][1]:.6g}")
    else:
        print("wrote checkpoint of freshly initialized parameters (0 iterations)")
    print(f"wrote {out / 'checkpoint.bsdg'}, {out / 'loss.csv'}, {out / 'runlog.csv'}")
    return 0


def _cmd_generate(opt):
    from .bsde import generate_batch, model_from_checkpoint
    from .checkpoint import load_checkpoint
    from .data import export_pgm
    from .rng import Rng

    ck = Path(opt["checkpoint"])
    if not ck.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ck}")
    out = Path(opt["out"])
    out.mkdir(parents=True, exist_ok=True)
    configs, _meta, params = load_checkpoint(ck.read_bytes())
    model = model_from_checkpoint(configs, params)
    image = configs.get("image")
    if image:
        rows, cols = int(image["rows"]), int(image["cols"])
    else:
        side = int(round(np.sqrt(model.d_y)))
        if side * side != model.d_y:
            raise ValueError("checkpoint lacks image geometry and d_y is not square")
        rows = cols = side
    batch = generate_batch(model, opt["count"], Rng(opt["seed"]))
    for i, sample in enumerate(batch):
        (out / f"img_{i:03d}.pgm").write_bytes(export_pgm(sample, rows, cols))
    print(f"wrote {opt['count']} images to {out}")
    return 0


def _cmd_eval(opt):
    from .rng import Rng
    from .trainer import evaluate

    ck = Path(opt["checkpoint"])
    if not ck.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ck}")
    ds = _load_dataset(opt["data"], opt["subset"], opt["downsample"])
    score = evaluate(ck.read_bytes(), ds, opt["count"], Rng(opt["seed"]))
    print(f"{score!r}")
    return 0


def _cmd_simulate(opt):
    from .rng import Rng, derive
    from .sde import ForwardSpec, TimeGrid, brownian_increments, euler_forward_x, sample_initial

    out = Path(opt["out"])
    out.mkdir(parents=True, exist_ok=True)
    grid = TimeGrid(opt["grid_t"], opt["grid_n"])
    d_x = opt["dx"]
    spec = ForwardSpec.brownian() if opt["kind"] == "brownian" else ForwardSpec.standard_ou(d_x)
    times = grid.times()
    rows = ["path,t," + ",".join(f"x{i}" for i in range(d_x))]
    for p in range(opt["paths"]):
        rng = Rng(derive(opt["seed"], p))
        zeta = sample_initial(d_x, rng)
        dw = brownian_increments(grid, d_x, rng)
        path = euler_forward_x(spec, zeta, dw, grid)
        for n, t in enumerate(times):
            rows.append(f"{p},{float(t)!r}," + ",".join(repr(float(v)) for v in path[n]))
    target = out / "paths.csv"
    target.write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {opt['paths']} path(s) to {target}")
    return 0


def _cmd_verify(opt):
    from .verify import run_all

    results = run_all(quick=opt["quick"])
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {
    "train": (_cmd_train, _TRAIN_OPTS, "train a model on an IDX image file"),
    "generate": (_cmd_generate, _GENERATE_OPTS, "sample PGM images from a checkpoint"),
    "eval": (_cmd_eval, _EVAL_OPTS, "MMD^2 between generated and held-out images"),
    "simulate": (_cmd_simulate, _SIMULATE_OPTS, "dump forward paths as CSV"),
    "verify": (_cmd_verify, _VERIFY_OPTS, "run the built-in analytic oracle suite"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bsdegen",
        description="Generative modeling with forward-backward stochastic dynamics.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, opts, help_text) in _COMMANDS.items():
        sub = subs.add_parser(name, help=help_text)
        _add_opts(sub, opts)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    fn, opts, _help = _COMMANDS[args.command]
    try:
        opt = _resolve(args, opts, args.command)
        return fn(opt)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
