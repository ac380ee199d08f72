"""Bouncing-sprite sequence generation and dataset I/O.

Sequences composite two sprites (MNIST digits or procedural squares) onto
a square canvas. Sprites move with constant speed and reflect off the
walls; overlaps combine by pixel-wise maximum so values stay in [0, 1].

Dataset container format (integers little-endian u32):

    magic   4 bytes  b"TCTD"
    version u32      currently 1
    B, L, H, W, C    u32 each
    frames  B*L*H*W*C little-endian float32, sequence-major (C order)
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataFormatError

IDX_IMAGE_MAGIC = 0x00000803
CONTAINER_MAGIC = b"TCTD"
CONTAINER_VERSION = 1


@dataclass
class Sprite:
    """2-D bitmap in [0, 1], typically a 28x28 digit."""

    bitmap: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.bitmap = np.asarray(self.bitmap, dtype=np.float32)
        if self.bitmap.ndim != 2:
            raise ConfigurationError(f"sprite bitmap must be 2-D, got {self.bitmap.ndim}-D")


@dataclass
class MotionState:
    """Top-left corner position (x, y) in pixels and per-frame velocity."""

    position: tuple[float, float]
    velocity: tuple[float, float]

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass
class SequenceBatch:
    """Batch of frame sequences, shape (B, L, H, W, C), values in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 5:
            raise ConfigurationError(f"sequence batch must be 5-D, got {self.frames.ndim}-D")
        if self.frames.size and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise ConfigurationError("sequence batch values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.frames.shape[0]


def load_idx(path) -> list[Sprite]:
    """Read an IDX image file (gzip transparently supported).

    Header is big-endian: magic 0x00000803, count, rows, cols, then
    count*rows*cols raw bytes scaled to [0, 1].
    """
    with open(path, "rb") as raw:
        head = raw.read(2)
        raw.seek(0)
        fh: BinaryIO = gzip.open(raw) if head == b"\x1f\x8b" else raw
        header = fh.read(16)
        if len(header) != 16:
            raise DataFormatError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        payload = fh.read(count * rows * cols)
        if len(payload) != count * rows * cols:
            raise DataFormatError(
                f"{path}: IDX payload has {len(payload)} bytes, expected {count * rows * cols}"
            )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    images = pixels.astype(np.float32) / 255.0
    return [Sprite(images[i]) for i in range(count)]


def make_square_sprites(sizes: Sequence[int] = (12,)) -> list[Sprite]:
    """Procedural fallback sprites: filled unit squares of the given sizes."""
    if not sizes or min(sizes) < 1:
        raise ConfigurationError("square sprite sizes must be positive")
    return [Sprite(np.ones((s, s), dtype=np.float32)) for s in sizes]


def _reflect(value: float, limit: float) -> tuple[float, bool]:
    """Fold a coordinate back into [0, limit], mirroring the overshoot."""
    flipped = False
    while value < 0.0 or value > limit:
        if value < 0.0:
            value = -value
        else:
            value = 2.0 * limit - value
        flipped = not flipped
    return value, flipped


def simulate_bounce(
    state: MotionState,
    canvas: tuple[int, int],
    sprite: tuple[int, int],
    steps: int,
) -> tuple[np.ndarray, MotionState]:
    """Advance a bouncing sprite; returns (positions, final state).

    positions has shape (steps + 1, 2) and includes the initial position.
    Reflection flips the offending velocity component and mirrors the
    overshoot, so speed is preserved exactly.
    """
    height, width = canvas
    sh, sw = sprite
    if sh > height or sw > width:
        raise ConfigurationError(f"sprite {sprite} larger than canvas {canvas}")
    max_x, max_y = float(width - sw), float(height - sh)
    x, y = state.position
    vx, vy = state.velocity
    if not (0.0 <= x <= max_x and 0.0 <= y <= max_y):
        raise ConfigurationError(f"initial position {state.position} out of bounds")

    positions = np.empty((steps + 1, 2), dtype=np.float64)
    positions[0] = (x, y)
    for i in range(1, steps + 1):
        x, flip_x = _reflect(x + vx, max_x)
        y, flip_y = _reflect(y + vy, max_y)
        if flip_x:
            vx = -vx
        if flip_y:
            vy = -vy
        positions[i] = (x, y)
    return positions, MotionState((x, y), (vx, vy))


def render_frame(
    placements: Iterable[tuple[Sprite, tuple[float, float]]],
    height: int,
    width: int,
) -> np.ndarray:
    """Composite sprites at rounded positions; overlaps take the max."""
    frame = np.zeros((height, width), dtype=np.float32)
    for sprite, (x, y) in placements:
        xi, yi = int(round(x)), int(round(y))
        sh, sw = sprite.bitmap.shape
        if xi < 0 or yi < 0 or yi + sh > height or xi + sw > width:
            raise RuntimeError(f"sprite placement ({x}, {y}) escapes the canvas")
        region = frame[yi:yi + sh, xi:xi + sw]
        np.maximum(region, sprite.bitmap, out=region)
    return frame


def sequence_motions(
    sprites: Sequence[Sprite],
    seed: int,
    index: int,
    canvas: tuple[int, int] = (64, 64),
    sprites_per_sequence: int = 2,
    speed_range: tuple[float, float] = (3.0, 5.0),
) -> list[tuple[Sprite, MotionState]]:
    """Draw a sequence's sprites and initial motion, deterministically.

    Sprites are picked uniformly with replacement, positions uniformly
    over the valid range, direction uniformly over [0, 2pi), speed
    uniformly over speed_range. The generator derives from
    (seed, sequence index), so generation order or parallelism cannot
    change the output.
    """
    if not sprites:
        raise ConfigurationError("need at least one sprite")
    height, width = canvas
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    chosen = [sprites[i] for i in rng.integers(0, len(sprites), size=sprites_per_sequence)]
    motions = []
    for sprite in chosen:
        sh, sw = sprite.bitmap.shape
        if sh > height or sw > width:
            raise ConfigurationError(f"sprite {(sh, sw)} larger than canvas {canvas}")
        x0 = rng.uniform(0.0, width - sw)
        y0 = rng.uniform(0.0, height - sh)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(*speed_range)
        motions.append(
            (sprite, MotionState((x0, y0), (speed * np.cos(angle), speed * np.sin(angle))))
        )
    return motions


def render_sequence(
    motions: Sequence[tuple[Sprite, MotionState]],
    length: int,
    canvas: tuple[int, int] = (64, 64),
) -> np.ndarray:
    """Simulate and rasterize one sequence; returns (length, H, W, 1)."""
    height, width = canvas
    trajectories = [
        simulate_bounce(state, canvas, sprite.bitmap.shape, length - 1)[0]
        for sprite, state in motions
    ]
    frames = np.zeros((length, height, width, 1), dtype=np.float32)
    for t in range(length):
        frames[t, :, :, 0] = render_frame(
            ((sprite, tuple(traj[t])) for (sprite, _), traj in zip(motions, trajectories)),
            height,
            width,
        )
    return frames


def iter_sequences(
    sprites: Sequence[Sprite],
    count: int,
    length: int = 20,
    seed: int = 0,
    canvas: tuple[int, int] = (64, 64),
    sprites_per_sequence: int = 2,
    speed_range: tuple[float, float] = (3.0, 5.0),
):
    """Stream rendered sequences one (length, H, W, 1) array at a time."""
    if count <= 0:
        raise ConfigurationError(f"sequence count must be positive, got {count}")
    if length < 1:
        raise ConfigurationError("sequence length must be >= 1")
    for s in range(count):
        motions = sequence_motions(
            sprites, seed, s, canvas, sprites_per_sequence, speed_range
        )
        yield render_sequence(motions, length, canvas)


def generate_dataset(
    sprites: Sequence[Sprite],
    count: int,
    length: int = 20,
    seed: int = 0,
    canvas: tuple[int, int] = (64, 64),
    sprites_per_sequence: int = 2,
    speed_range: tuple[float, float] = (3.0, 5.0),
) -> SequenceBatch:
    """Materialize `count` sequences as one batch; see iter_sequences."""
    frames = np.stack(
        list(
            iter_sequences(
                sprites, count, length, seed, canvas, sprites_per_sequence, speed_range
            )
        )
    )
    return SequenceBatch(frames)


def save_sequences(batch: SequenceBatch, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", CONTAINER_VERSION))
        fh.write(struct.pack("<5I", *batch.frames.shape))
        fh.write(np.ascontiguousarray(batch.frames, dtype="<f4").tobytes())


def load_sequences(path) -> SequenceBatch:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CONTAINER_MAGIC:
            raise DataFormatError(f"{path}: not a dataset container (bad magic)")
        header = fh.read(24)
        if len(header) != 24:
            raise DataFormatError(f"{path}: truncated container header")
        version, *extents = struct.unpack("<6I", header)
        if version != CONTAINER_VERSION:
            raise DataFormatError(f"{path}: unsupported container version {version}")
        expected = 4 * int(np.prod(extents, dtype=np.int64))
        payload = fh.read(expected)
        if len(payload) != expected:
            raise DataFormatError(
                f"{path}: container payload has {len(payload)} bytes, expected {expected}"
            )
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after frame data")
    frames = np.frombuffer(payload, dtype="<f4").reshape(extents).copy()
    return SequenceBatch(frames)
