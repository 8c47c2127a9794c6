"""Model-free training utilities for the memory-augmented generator.

Covers the residual error buffer (collect / inject), flow-matching targets,
context assembly and temporal RoPE with per-head perturbed bases.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ROLES",
    "LatentFrame",
    "ErrorBuffer",
    "RopeConfig",
    "ContextLayout",
    "ContextBatch",
    "collect_residual",
    "inject_error",
    "flow_target",
    "flow_loss",
    "rope_bases",
    "rope_phases",
    "phase_collision_rate",
    "sample_training_mode",
    "assemble_context",
]

ROLES = ("memory", "past", "current", "reference")


@dataclass(frozen=True, eq=False)
class LatentFrame:
    values: np.ndarray
    frame_index: int
    role: str = "current"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def with_values(self, values: np.ndarray, role: str | None = None) -> "LatentFrame":
        return LatentFrame(values, self.frame_index, role or self.role)


class ErrorBuffer:
    """Bounded FIFO of prediction residuals, sampled uniformly.

    Appends are serialized by a lock; sampling reads a snapshot, so
    concurrent readers are safe.
    """

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[np.ndarray] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def push(self, residual: np.ndarray) -> None:
        r = np.array(residual, dtype=np.float64)
        if not np.all(np.isfinite(r)):
            raise ValueError("residuals must be finite")
        r.setflags(write=False)
        with self._lock:
            if self._items and self._items[0].shape != r.shape:
                raise ValueError(f"residual shape {r.shape} differs from buffer shape {self._items[0].shape}")
            self._items.append(r)

    def snapshot(self) -> tuple[np.ndarray, ...]:
        with self._lock:
            return tuple(self._items)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        items = self.snapshot()
        if not items:
            raise ValueError("cannot sample from an empty error buffer")
        return items[int(rng.integers(len(items)))]


def collect_residual(predicted: LatentFrame, ground_truth: LatentFrame, buffer: ErrorBuffer) -> ErrorBuffer:
    """Store ``predicted - ground_truth``; the oldest residual drops at capacity."""
    if predicted.values.shape != ground_truth.values.shape:
        raise ValueError(f"shape mismatch: {predicted.values.shape} vs {ground_truth.values.shape}")
    buffer.push(predicted.values - ground_truth.values)
    return buffer


def inject_error(x: LatentFrame, buffer: ErrorBuffer | None, gamma: float, seed=None) -> LatentFrame:
    """``x + gamma * delta`` with ``delta`` drawn uniformly from the buffer.

    ``gamma == 0`` returns ``x`` itself untouched.
    """
    if gamma == 0:
        return x
    if buffer is None or len(buffer) == 0:
        raise ValueError("error injection with gamma != 0 needs a non-empty buffer")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    delta = buffer.sample(rng)
    if delta.shape != x.values.shape:
        raise ValueError(f"residual shape {delta.shape} does not match latent shape {x.values.shape}")
    return x.with_values(x.values + gamma * delta)


def flow_target(x_current, epsilon) -> np.ndarray:
    """Velocity target ``epsilon - x`` for the flow-matching objective."""
    x, e = np.asarray(x_current, dtype=np.float64), np.asarray(epsilon, dtype=np.float64)
    if x.shape != e.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {e.shape}")
    return e - x


def flow_loss(target, v_pred) -> float:
    t, v = np.asarray(target, dtype=np.float64), np.asarray(v_pred, dtype=np.float64)
    if t.shape != v.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {v.shape}")
    return float(np.mean((t - v) ** 2))


@dataclass(frozen=True)
class RopeConfig:
    theta_base: float = 10000.0
    sigma_theta: float = 0.8
    head_count: int = 16
    rotary_dim: int = 64

    def __post_init__(self):
        if not self.theta_base > 1:
            raise ValueError("theta_base must be > 1")
        if self.sigma_theta < 0:
            raise ValueError("sigma_theta must be >= 0")
        if self.head_count < 1:
            raise ValueError("head_count must be >= 1")
        if self.rotary_dim < 2 or self.rotary_dim % 2:
            raise ValueError("rotary_dim must be an even count >= 2")

    @property
    def epsilon(self) -> np.ndarray:
        """Per-head perturbation coefficients, evenly spread over [-1, 1]."""
        if self.head_count == 1:
            return np.zeros(1)
        return np.linspace(-1.0, 1.0, self.head_count)


def rope_bases(cfg: RopeConfig) -> np.ndarray:
    bases = cfg.theta_base * (1.0 + cfg.sigma_theta * cfg.epsilon)
    if np.any(bases <= 1.0):
        raise ValueError(f"effective rotary bases must exceed 1, got min {bases.min():.6g}")
    return bases


def _inv_freq(base: float, rotary_dim: int) -> np.ndarray:
    return base ** (-np.arange(0, rotary_dim, 2, dtype=np.float64) / rotary_dim)


def rope_phases(frame_index: float, cfg: RopeConfig, head: int) -> np.ndarray:
    """Rotary angles of one head at an absolute frame index."""
    if not 0 <= head < cfg.head_count:
        raise IndexError(f"head {head} out of range for {cfg.head_count} heads")
    return frame_index * _inv_freq(rope_bases(cfg)[head], cfg.rotary_dim)


def phase_collision_rate(delta_t_set: Sequence[float], cfg: RopeConfig, tolerance: float) -> float:
    """Fraction of offsets at which every head's slowest rotary channel is aliased.

    An offset aliases on a head when its lowest-frequency phase lies within
    ``tolerance`` radians of a multiple of 2*pi.
    """
    dts = np.asarray(delta_t_set, dtype=np.float64)
    if dts.size == 0:
        raise ValueError("delta_t_set must be non-empty")
    slowest = rope_bases(cfg) ** (-(cfg.rotary_dim - 2) / cfg.rotary_dim)
    phase = np.outer(dts, slowest)
    wrapped = np.abs(phase - 2.0 * np.pi * np.round(phase / (2.0 * np.pi)))
    return float(np.mean(np.all(wrapped <= tolerance, axis=1)))


@dataclass(frozen=True)
class ContextLayout:
    memory_len: int = 5
    past_len: int = 4
    current_len: int = 10
    i2v_current_len: int = 14
    past_mode_prob: float = 0.8
    mask_prob: float = 0.2

    def __post_init__(self):
        for name in ("memory_len", "past_len", "current_len", "i2v_current_len"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("past_mode_prob", "mask_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class ContextBatch:
    frames: tuple[LatentFrame, ...]  # conditioning + noisy current, in sequence order
    clean_current: tuple[LatentFrame, ...]
    noise: np.ndarray  # (current_len, *latent_shape)
    t: float
    groups: dict  # role -> slice into ``frames``
    masked: bool
    mode: str

    @property
    def loss_slice(self) -> slice:
        return self.groups["current"]

    def target(self) -> np.ndarray:
        x = np.stack([f.values for f in self.clean_current]) if self.clean_current else np.zeros_like(self.noise)
        return flow_target(x, self.noise)


def sample_training_mode(layout: ContextLayout, rng: np.random.Generator) -> str:
    """Draw ``standard`` with ``past_mode_prob``, otherwise ``i2v``."""
    return "standard" if rng.random() < layout.past_mode_prob else "i2v"


def assemble_context(memory: Sequence[LatentFrame], past: Sequence[LatentFrame],
                     current_gt: Sequence[LatentFrame] | None, layout: ContextLayout = ContextLayout(),
                     mode: str = "standard", buffer: ErrorBuffer | None = None,
                     gamma_h: float = 0.5, gamma_m: float = 0.3, seed=None,
                     reference: LatentFrame | None = None, t: float | None = None,
                     current_indices: Sequence[int] | None = None) -> ContextBatch:
    """Lay out one training (or inference) sequence.

    standard: ``[memory (r), past (k), current]``; memory gets error injection
    scaled by ``gamma_m``, past by ``gamma_h``.  With probability
    ``layout.mask_prob`` the memory and past values are zeroed.
    i2v: ``[reference, current]`` with memory and past absent.
    A ``reference`` in standard mode is prepended as the persistent sink.

    Current frames are noised as ``(1 - t) x + t eps``; ``t`` defaults to a
    uniform draw.  Passing ``current_gt=None`` yields pure noise (``t = 1``),
    which needs ``current_indices`` for the frame indices.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mode == "standard":
        n_cur = layout.current_len
        if len(memory) != layout.memory_len or len(past) != layout.past_len:
            raise ValueError(f"standard mode needs {layout.memory_len} memory and {layout.past_len} past "
                             f"frames, got {len(memory)} and {len(past)}")
    elif mode == "i2v":
        n_cur = layout.i2v_current_len
        if reference is None:
            raise ValueError("i2v mode needs a reference frame")
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if current_gt is None:
        if current_indices is None or len(current_indices) != n_cur:
            raise ValueError(f"pure-noise context needs {n_cur} current_indices")
        t = 1.0
        clean: tuple[LatentFrame, ...] = ()
        shape = (reference or (memory[0] if memory else past[0])).values.shape
        indices = list(current_indices)
    else:
        if len(current_gt) != n_cur:
            raise ValueError(f"{mode} mode needs {n_cur} current frames, got {len(current_gt)}")
        clean = tuple(f.with_values(f.values, "current") for f in current_gt)
        shape = clean[0].values.shape
        indices = [f.frame_index for f in clean]
        if t is None:
            t = float(rng.uniform())

    masked = False
    frames: list[LatentFrame] = []
    groups: dict[str, slice] = {}
    if reference is not None:
        groups["reference"] = slice(0, 1)
        frames.append(reference.with_values(reference.values, "reference"))
    if mode == "standard":
        masked = bool(rng.random() < layout.mask_prob)
        start = len(frames)
        for m in memory:
            v = np.zeros(shape) if masked else inject_error(m, buffer, gamma_m, rng).values
            frames.append(m.with_values(v, "memory"))
        groups["memory"] = slice(start, len(frames))
        start = len(frames)
        for p in past:
            v = np.zeros(shape) if masked else inject_error(p, buffer, gamma_h, rng).values
            frames.append(p.with_values(v, "past"))
        groups["past"] = slice(start, len(frames))

    noise = rng.standard_normal((n_cur, *shape))
    start = len(frames)
    for i, idx in enumerate(indices):
        x = clean[i].values if clean else np.zeros(shape)
        frames.append(LatentFrame((1.0 - t) * x + t * noise[i], idx, "current"))
    groups["current"] = slice(start, len(frames))
    return ContextBatch(tuple(frames), clean, noise, t, groups, masked, mode)
