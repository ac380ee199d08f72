"""Command-line entry point.

Subcommands: datagen, train, eval, predict, gradcheck. Every run echoes
its effective configuration to the output directory. Exit codes: 0 on
success, 2 for configuration/argument problems, 3 for missing or
malformed data files, 4 for numeric failures, 1 for anything unexpected.

Heavy imports are deferred so --threads can pin thread environment
variables before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tctn",
        description="Causal temporal-convolution Transformer for video frame prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "datagen": "generate a bouncing-sprite dataset container",
        "train": "train a model on a dataset container",
        "eval": "evaluate a checkpoint with frame-wise PSNR/SSIM/MAE",
        "predict": "roll out predictions and export them as PGM images",
        "gradcheck": "verify analytic gradients against finite differences",
    }
    for name, help_text in commands.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, help="override the config thread count")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
    return parser


def write_pgm(path, frame) -> None:
    """Write one [0, 1] grayscale frame as a binary PGM (maxval 255)."""
    import numpy as np

    arr = np.asarray(frame)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_run_config(args):
    from .runconfig import RunConfig

    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.threads is not None:
        cfg.set("threads", args.threads)
    os.makedirs(args.out, exist_ok=True)
    cfg.echo(os.path.join(args.out, "config.effective"))
    return cfg


def _sprites(cfg):
    from .datagen import load_idx, make_square_sprites

    if cfg["mnist_images"]:
        return load_idx(cfg["mnist_images"])
    return make_square_sprites(cfg["sprite_sizes"])


def _cmd_datagen(args) -> int:
    from .datagen import generate_dataset, save_sequences

    cfg = _load_run_config(args)
    length = cfg["input_len"] + cfg["horizon"]
    batch = generate_dataset(
        _sprites(cfg),
        count=cfg["count"],
        length=length,
        seed=cfg["seed"],
        canvas=(cfg["height"], cfg["width"]),
    )
    path = cfg["dataset"] or os.path.join(args.out, "dataset.tctd")
    save_sequences(batch, path)
    b, l, h, w, c = batch.frames.shape
    print(f"wrote {path}: {b} sequences of {l} frames at {h}x{w}x{c}")
    print(f"sha256 {_sha256(path)}")
    return EXIT_OK


def _require_path(cfg, key: str):
    from .errors import ConfigurationError

    value = cfg[key]
    if not value:
        raise ConfigurationError(f"config key {key!r} must point to a file")
    return value


def _cmd_train(args) -> int:
    from .datagen import load_sequences
    from .harness import train
    from .model import init_parameters

    cfg = _load_run_config(args)
    dataset = load_sequences(_require_path(cfg, "dataset"))
    model = init_parameters(cfg.model_config(), seed=cfg["seed"])
    ckpt = cfg["checkpoint"] or os.path.join(args.out, "checkpoint.tctn")
    log = train(
        model,
        dataset,
        cfg.train_config(),
        log_path=os.path.join(args.out, "train_log.csv"),
        checkpoint_path=ckpt,
    )
    print(f"trained {len(log)} steps; first loss {log[0].loss:.6g}, last loss {log[-1].loss:.6g}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .checkpoint import load_model
    from .datagen import load_sequences

    cfg = _load_run_config(args)
    model = load_model(_require_path(cfg, "checkpoint"))
    dataset = load_sequences(_require_path(cfg, "dataset"))
    from .harness import evaluate

    report = evaluate(model, dataset)
    path = os.path.join(args.out, "metrics.csv")
    report.write_csv(path)
    agg = report.aggregate
    print(f"psnr {agg.psnr:.4f} dB  ssim {agg.ssim:.4f}  mae {agg.mae:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    from .checkpoint import load_model
    from .datagen import SequenceBatch, load_sequences, save_sequences
    from .errors import ConfigurationError
    from .harness import predict_autoregressive

    cfg = _load_run_config(args)
    model = load_model(_require_path(cfg, "checkpoint"))
    dataset = load_sequences(_require_path(cfg, "dataset"))
    index = cfg["sequence_index"]
    if not 0 <= index < len(dataset):
        raise ConfigurationError(f"sequence_index {index} outside dataset of {len(dataset)}")
    j, k = model.config.input_len, model.config.horizon
    context = dataset.frames[index, :j]
    preds = predict_autoregressive(model, context, k)
    for step in range(k):
        write_pgm(os.path.join(args.out, f"pred_{step + 1:02d}.pgm"), preds[step])
    save_sequences(SequenceBatch(preds[None]), os.path.join(args.out, "predictions.tctd"))
    print(f"wrote {k} PGM frames and predictions.tctd to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import MODEL_TOLERANCE, OP_TOLERANCE, check_model, check_ops

    _load_run_config(args)
    op_errors = check_ops()
    worst_op = max(op_errors.values())
    for name in sorted(op_errors):
        print(f"op {name:28s} max rel err {op_errors[name]:.3e}")
    model_errors = check_model()
    worst_group = max(model_errors.values())
    print(f"full model worst parameter group: {worst_group:.3e}")
    ok = worst_op < OP_TOLERANCE and worst_group < MODEL_TOLERANCE
    print(
        f"gradcheck {'PASS' if ok else 'FAIL'}: ops {worst_op:.3e} "
        f"(tol {OP_TOLERANCE:g}), model {worst_group:.3e} (tol {MODEL_TOLERANCE:g})"
    )
    return EXIT_OK if ok else EXIT_NUMERIC


_COMMANDS = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None and args.threads >= 1:
        for var in _THREAD_ENV_VARS:
            os.environ.setdefault(var, str(args.threads))

    from .errors import ConfigurationError, DataFormatError, NumericError, ShapeMismatchError

    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ShapeMismatchError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
