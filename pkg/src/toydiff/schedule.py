"""Linear beta schedule and deterministic (eta = 0) DDIM step algebra.

Step index ``-1`` denotes the clean latent (alpha_bar = 1).  Trajectories
therefore run ``-1 -> infer_steps[0] -> ... -> infer_steps[-1]`` on the way
up and the reverse on the way down, giving ``T_infer`` steps each way.

The step functions are written with :mod:`toydiff.numerics` ops so that the
same code is differentiable when ``eps_hat`` is a graph node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx

CLEAN = -1


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    infer_steps: np.ndarray
    beta_start: float
    beta_end: float

    def __post_init__(self):
        b, ab, steps = self.betas, self.alpha_bars, self.infer_steps
        if b.ndim != 1 or b.size < 2:
            raise ValueError("schedule needs at least 2 training steps")
        if not np.all((b > 0) & (b < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        if not (np.all(np.diff(ab) < 0) and ab[0] < 1 and ab[-1] > 0):
            raise ValueError("alpha_bars must be strictly decreasing inside (0, 1)")
        if steps.size < 1 or steps[0] < 0 or steps[-1] >= b.size or np.any(np.diff(steps) <= 0):
            raise ValueError("infer_steps must be strictly increasing inside [0, T_train)")
        for arr in (self.betas, self.alphas, self.alpha_bars, self.infer_steps):
            arr.flags.writeable = False

    @property
    def T_train(self) -> int:
        return int(self.betas.size)

    @property
    def T_infer(self) -> int:
        return int(self.infer_steps.size)

    def alpha_bar(self, t: int) -> float:
        """alpha_bar at training index ``t``; ``CLEAN`` (-1) maps to 1."""
        t = int(t)
        if t == CLEAN:
            return 1.0
        if not 0 <= t < self.T_train:
            raise IndexError(f"step index {t} outside [-1, {self.T_train})")
        return float(self.alpha_bars[t])

    def levels(self) -> list[int]:
        """Noise levels visited by an inversion, clean first."""
        return [CLEAN] + [int(t) for t in self.infer_steps]


def linear_beta_schedule(T_train: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T_train < 2:
        raise ValueError(f"T_train must be >= 2, got {T_train}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T_train, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(
        betas=betas,
        alphas=alphas,
        alpha_bars=np.cumprod(alphas),
        infer_steps=np.arange(T_train, dtype=np.int64),
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


def infer_subsequence(s: NoiseSchedule, T_infer: int) -> NoiseSchedule:
    """Uniformly spaced inference indices ``floor(k * T_train / T_infer)``."""
    if not 1 <= T_infer <= s.T_train:
        raise ValueError(f"T_infer must lie in [1, {s.T_train}], got {T_infer}")
    steps = (np.arange(T_infer, dtype=np.int64) * s.T_train) // T_infer
    return NoiseSchedule(s.betas.copy(), s.alphas.copy(), s.alpha_bars.copy(), steps, s.beta_start, s.beta_end)


def make_schedule(T_train: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02, T_infer: int = 60) -> NoiseSchedule:
    return infer_subsequence(linear_beta_schedule(T_train, beta_start, beta_end), T_infer)


def _check_shapes(z, eps):
    sz, se = np.shape(nx.value_of(z)), np.shape(nx.value_of(eps))
    if sz != se:
        raise nx.ShapeError(f"latent shape {sz} and noise shape {se} differ")


def _move(s, z_t, eps_hat, t, t_to):
    ab_t, ab_to = s.alpha_bar(t), s.alpha_bar(t_to)
    x0 = nx.scale(nx.sub(z_t, nx.scale(eps_hat, math.sqrt(1.0 - ab_t))), 1.0 / math.sqrt(ab_t))
    return nx.add(nx.scale(x0, math.sqrt(ab_to)), nx.scale(eps_hat, math.sqrt(1.0 - ab_to)))


def ddim_sample_step(s: NoiseSchedule, z_t, eps_hat, t: int, t_prev: int):
    """Move from level ``t`` down to ``t_prev`` along the deterministic path."""
    if not t_prev <= t:
        raise ValueError(f"sample step needs t_prev <= t, got t={t}, t_prev={t_prev}")
    _check_shapes(z_t, eps_hat)
    return _move(s, z_t, eps_hat, t, t_prev)


def ddim_invert_step(s: NoiseSchedule, z_t, eps_hat, t: int, t_next: int):
    """Move from level ``t`` up to ``t_next`` (the inverse of a sample step)."""
    if not t_next >= t:
        raise ValueError(f"invert step needs t_next >= t, got t={t}, t_next={t_next}")
    _check_shapes(z_t, eps_hat)
    return _move(s, z_t, eps_hat, t, t_next)


def forward_diffuse(s: NoiseSchedule, z0, t: int, noise):
    """Training-time corruption sqrt(ab) * z0 + sqrt(1 - ab) * noise."""
    _check_shapes(z0, noise)
    ab = s.alpha_bar(t)
    return nx.add(nx.scale(z0, math.sqrt(ab)), nx.scale(noise, math.sqrt(1.0 - ab)))
