"""Stochastic feature corruption whose reconstruction is the auxiliary task.

Three independent dimensions: temporal blocks (zeroed / replaced / kept with
probabilities 0.8 / 0.1 / 0.1), a contiguous channel block zeroed across all
frames, and optional full-matrix Gaussian magnitude noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMatrix


@dataclass(frozen=True)
class AlterationConfig:
    time_width: int = 4  # consecutive frames per selected block
    max_time_fraction: float = 0.15  # cap on the fraction of frames selected
    channel_max_width: int = 4
    magnitude_prob: float = 0.0  # off by default for contrastive pretraining
    magnitude_variance: float = 0.2
    p_zero: float = 0.8
    p_replace: float = 0.1
    p_keep: float = 0.1

    def __post_init__(self):
        if self.time_width < 0 or self.channel_max_width < 0:
            raise ValueError("alteration widths must be >= 0")
        if not 0.0 <= self.max_time_fraction <= 1.0:
            raise ValueError(f"max_time_fraction must lie in [0, 1], got {self.max_time_fraction}")
        if not 0.0 <= self.magnitude_prob <= 1.0:
            raise ValueError(f"magnitude_prob must lie in [0, 1], got {self.magnitude_prob}")
        total = self.p_zero + self.p_replace + self.p_keep
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"policy probabilities must sum to 1, got {total}")


@dataclass
class AlterationRecord:
    """Altered features plus masks saying which cells the policy touched."""

    altered: FeatureMatrix
    time_mask: np.ndarray  # (T,) bool, frames selected for the temporal policy
    channel_mask: np.ndarray  # (F,) bool
    magnitude_applied: bool = False
    temporal_branches: list = field(default_factory=list)  # (start, width, branch)


def _empty_record(f: FeatureMatrix) -> AlterationRecord:
    return AlterationRecord(
        altered=f.copy_with(f.values.copy()),
        time_mask=np.zeros(f.num_frames, dtype=bool),
        channel_mask=np.zeros(f.num_channels, dtype=bool),
    )


def num_time_blocks(num_frames: int, cfg: AlterationConfig) -> int:
    """floor(max_fraction * T / width) block starts are selected."""
    if cfg.time_width == 0:
        return 0
    return int(cfg.max_time_fraction * num_frames / cfg.time_width)


def alter_temporal(f: FeatureMatrix, cfg: AlterationConfig, rng: np.random.Generator) -> AlterationRecord:
    """Corrupt block-aligned frame runs under the zero/replace/keep policy."""
    rec = _empty_record(f)
    t_total = f.num_frames
    n_blocks = num_time_blocks(t_total, cfg)
    if n_blocks == 0 or t_total == 0:
        return rec
    # Non-overlapping by construction: starts are drawn without replacement
    # from the positions at stride time_width.
    grid = np.arange(0, t_total, cfg.time_width)
    n_blocks = min(n_blocks, len(grid))
    starts = np.sort(rng.choice(grid, size=n_blocks, replace=False))
    values = rec.altered.values
    for start in starts.tolist():
        end = min(start + cfg.time_width, t_total)
        width = end - start
        u = float(rng.random())
        if u < cfg.p_zero:
            branch = "zero"
            values[start:end, :] = 0.0
        elif u < cfg.p_zero + cfg.p_replace:
            branch = "replace"
            src = int(rng.integers(0, t_total - width + 1))
            values[start:end, :] = f.values[src : src + width, :]
        else:
            branch = "keep"
        rec.time_mask[start:end] = True
        rec.temporal_branches.append((int(start), int(width), branch))
    return rec


def alter_channel(f: FeatureMatrix, cfg: AlterationConfig, rng: np.random.Generator) -> AlterationRecord:
    """Zero a channel block of width Uniform{0..max} across all frames."""
    rec = _empty_record(f)
    f_total = f.num_channels
    if cfg.channel_max_width >= f_total:
        raise ValueError(f"channel_max_width {cfg.channel_max_width} must be < {f_total} channels")
    width = int(rng.integers(0, cfg.channel_max_width + 1))
    if width == 0:
        return rec
    start = int(rng.integers(0, f_total - width + 1))
    rec.altered.values[:, start : start + width] = 0.0
    rec.channel_mask[start : start + width] = True
    return rec


def alter_magnitude(f: FeatureMatrix, cfg: AlterationConfig, rng: np.random.Generator) -> AlterationRecord:
    """With probability magnitude_prob, add elementwise Gaussian noise."""
    rec = _empty_record(f)
    if cfg.magnitude_prob > 0.0 and float(rng.random()) < cfg.magnitude_prob:
        noise = rng.normal(0.0, np.sqrt(cfg.magnitude_variance), size=f.values.shape)
        rec.altered.values += noise
        rec.magnitude_applied = True
    return rec


def alter(f: FeatureMatrix, cfg: AlterationConfig, rng: np.random.Generator) -> AlterationRecord:
    """Temporal, then channel, then magnitude alteration; masks merged."""
    rec_t = alter_temporal(f, cfg, rng)
    rec_c = alter_channel(rec_t.altered, cfg, rng)
    rec_m = alter_magnitude(rec_c.altered, cfg, rng)
    return AlterationRecord(
        altered=rec_m.altered,
        time_mask=rec_t.time_mask,
        channel_mask=rec_c.channel_mask,
        magnitude_applied=rec_m.magnitude_applied,
        temporal_branches=rec_t.temporal_branches,
    )
