"""Flat key=value run configuration.

A config file holds one ``key = value`` pair per line ('#' starts a
comment). Every key is validated against the schema below; unknown keys
are rejected. The effective (defaults-merged) configuration is echoed to
the output directory so any run can be reproduced from its artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .errors import ConfigurationError
from .harness import TrainConfig
from .model import TCTNConfig


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _parse_optional_int(text: str) -> Optional[int]:
    if text.lower() in ("", "none"):
        return None
    return int(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], object]
    default: object
    about: str


SCHEMA: dict[str, _Key] = {
    # architecture
    "input_len": _Key(int, 10, "context frames J"),
    "horizon": _Key(int, 10, "predicted frames K"),
    "height": _Key(int, 64, "frame height"),
    "width": _Key(int, 64, "frame width"),
    "channels": _Key(int, 1, "frame channels"),
    "embed_dim": _Key(int, 128, "embedding channels D"),
    "num_blocks": _Key(int, 6, "Transformer blocks N"),
    "embed_kernel": _Key(int, 5, "spatial embedding kernel extent"),
    "tc_kernel": _Key(_parse_int_tuple, (3, 3, 3), "temporal conv kernel kt,kh,kw"),
    "dropout": _Key(float, 0.1, "dropout probability"),
    "lrelu_slope": _Key(float, 0.01, "leaky ReLU negative slope"),
    "use_posenc": _Key(_parse_bool, True, "add sinusoidal positional encoding"),
    "qkv_bias": _Key(_parse_bool, True, "train biases on the q/k/v convolutions"),
    # training
    "batch_size": _Key(int, 8, "sequences per optimization step"),
    "base_lr": _Key(float, 1e-4, "initial learning rate"),
    "min_lr": _Key(float, 0.0, "cosine annealing floor"),
    "epochs": _Key(int, 1, "training epochs"),
    "beta1": _Key(float, 0.9, "Adam first-moment decay"),
    "beta2": _Key(float, 0.999, "Adam second-moment decay"),
    "adam_eps": _Key(float, 1e-8, "Adam denominator epsilon"),
    "loss": _Key(str, "all", "loss coverage: 'all' outputs or 'future' only"),
    "max_steps": _Key(_parse_optional_int, None, "hard cap on optimization steps"),
    # data
    "count": _Key(int, 100, "sequences to generate"),
    "mnist_images": _Key(str, "", "IDX image file for sprites (procedural squares when empty)"),
    "sprite_sizes": _Key(_parse_int_tuple, (12,), "square sprite sizes for the fallback"),
    "sequence_index": _Key(int, 0, "sequence used by the predict command"),
    # paths
    "dataset": _Key(str, "", "dataset container path"),
    "checkpoint": _Key(str, "", "checkpoint path"),
    # run
    "seed": _Key(int, 0, "run seed"),
    "threads": _Key(int, 1, "worker threads (kernels are deterministic regardless)"),
}


class RunConfig:
    """Validated, defaults-merged flat configuration."""

    def __init__(self, values: Optional[dict] = None):
        self._values = {k: spec.default for k, spec in SCHEMA.items()}
        for key, value in (values or {}).items():
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            self._values[key] = value

    def __getitem__(self, key: str):
        return self._values[key]

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        self._values[key] = value

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        values: dict = {}
        if path is not None:
            with open(path) as fh:
                for lineno, raw in enumerate(fh, start=1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigurationError(f"{path}:{lineno}: expected key = value")
                    key, _, text = line.partition("=")
                    key, text = key.strip(), text.strip()
                    if key not in SCHEMA:
                        raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
                    try:
                        values[key] = SCHEMA[key].parse(text)
                    except (ValueError, TypeError) as exc:
                        raise ConfigurationError(
                            f"{path}:{lineno}: bad value for {key}: {exc}"
                        ) from exc
        return cls(values)

    def model_config(self) -> TCTNConfig:
        if self["loss"] not in ("all", "future"):
            raise ConfigurationError(f"loss must be 'all' or 'future', got {self['loss']!r}")
        return TCTNConfig(
            input_len=self["input_len"],
            horizon=self["horizon"],
            height=self["height"],
            width=self["width"],
            channels=self["channels"],
            embed_dim=self["embed_dim"],
            num_blocks=self["num_blocks"],
            embed_kernel=self["embed_kernel"],
            tc_kernel=self["tc_kernel"],
            dropout_p=self["dropout"],
            lrelu_slope=self["lrelu_slope"],
            use_posenc=self["use_posenc"],
            qkv_bias=self["qkv_bias"],
            seed=self["seed"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self["batch_size"],
            base_lr=self["base_lr"],
            epochs=self["epochs"],
            betas=(self["beta1"], self["beta2"]),
            adam_eps=self["adam_eps"],
            min_lr=self["min_lr"],
            seed=self["seed"],
            loss_on_all_outputs=self["loss"] == "all",
            max_steps=self["max_steps"],
        )

    def echo(self, path) -> None:
        """Write the effective configuration in re-loadable form."""
        with open(path, "w") as fh:
            for key in sorted(self._values):
                fh.write(f"{key} = {_format(self._values[key])}\n")
