"""Embedding-shift editing: sample with rewritten embeddings plus a domain gap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inversion import Trajectory, sample_from
from .mirror import PromptTrack
from .model import GuidanceConfig
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class DomainGap:
    delta: np.ndarray
    source_labels: tuple[str, ...]
    target_labels: tuple[str, ...]

    @property
    def sizes(self) -> tuple[int, int]:
        return len(self.source_labels), len(self.target_labels)


def domain_gap(m, source_labels, target_labels) -> DomainGap:
    """Mean target embedding minus mean source embedding."""
    source_labels, target_labels = tuple(source_labels), tuple(target_labels)
    if not source_labels or not target_labels:
        raise ValueError("domain gap needs non-empty source and target label sets")
    src = np.mean([m.embed_label(lab) for lab in source_labels], axis=0)
    tgt = np.mean([m.embed_label(lab) for lab in target_labels], axis=0)
    return DomainGap(tgt - src, source_labels, target_labels)


def edit_sample(m, s: NoiseSchedule, g: GuidanceConfig, traj: Trajectory, track: PromptTrack | None,
                gap: DomainGap, strength: float = 1.0) -> np.ndarray:
    """Sample from ``traj.zT`` with ``c_rewrite_t + strength * delta`` at every step.

    ``track=None`` gives the unrewritten baseline that shifts the original
    source condition instead.
    """
    if not np.isfinite(strength):
        raise ValueError("strength must be finite")
    if track is None:
        base = [traj.condition] * s.T_infer
    else:
        if len(track) != s.T_infer:
            raise ValueError(f"prompt track has {len(track)} steps, trajectory needs {s.T_infer}")
        base = track.conds_by_level()
    shift = strength * gap.delta
    return sample_from(m, s, g, traj, [c + shift for c in base]).z0


def encode(img) -> np.ndarray:
    """Identity latent: the image itself as float64."""
    return np.array(img, dtype=np.float64)


def decode(z0, shape=None) -> np.ndarray:
    """Clamp to [0, 1] and reshape to the image shape."""
    z0 = np.asarray(z0, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != z0.size:
            raise ValueError(f"latent of size {z0.size} cannot be decoded to shape {tuple(shape)}")
        z0 = z0.reshape(shape)
    return np.clip(z0, 0.0, 1.0)
