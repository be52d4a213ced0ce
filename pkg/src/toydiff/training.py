"""Denoiser training on the noise-prediction objective, plus Adam."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .schedule import NoiseSchedule, forward_diffuse

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update. Returns new arrays; updates ``state`` in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    new = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise nx.ShapeError(f"adam: gradient shape {g.shape} does not match parameter {k} shape {np.shape(p)}")
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        new[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    cond_drop: float = 0.1  # probability of training on the null embedding

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or not self.lr > 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if not 0 <= self.cond_drop < 1:
            raise ValueError("cond_drop must lie in [0, 1)")


def ddpm_loss(m, s: NoiseSchedule, z0, c, t: int, noise, params=None):
    """Mean squared error between the injected noise and the model's prediction."""
    z_t = forward_diffuse(s, z0, t, noise)
    diff = nx.sub(noise, m.predict_noise(z_t, t, c, params))
    return nx.mean(nx.mul(diff, diff))


def _batch_loss(m, s, pnodes, z0, label_idx, t, noise, use_null):
    B = z0.shape[0]
    ab = s.alpha_bars[t][:, None]
    z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise
    n_labels = len(m.labels)
    onehot = np.zeros((B, n_labels + 1))
    rows = np.where(use_null, n_labels, label_idx)
    onehot[np.arange(B), rows] = 1.0
    table = nx.concat([pnodes["emb"], nx.reshape(pnodes["null"], (1, m.cond_dim))], axis=0)
    cond = nx.matmul(onehot, table)
    pred = m.forward(z_t, t.astype(np.float64), cond, pnodes)
    diff = nx.sub(noise, pred)
    return nx.mean(nx.mul(diff, diff))


def train(m, s: NoiseSchedule, dataset, cfg: TrainConfig):
    """Fit ``m`` on ``dataset`` (needs ``.images`` and ``.labels``).

    Returns ``(trained_model, per_epoch_mean_loss)``.  Timesteps are drawn
    uniformly over the training range and noise fresh per sample from a
    seeded Philox stream, so runs replay bit-for-bit.
    """
    images = np.asarray(dataset.images, dtype=np.float64)
    if images.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    unknown = sorted(set(dataset.labels) - set(m.labels))
    if unknown:
        raise KeyError(f"dataset labels {unknown} missing from the embedding table")
    N = images.shape[0]
    z0_all = images.reshape(N, -1)
    idx_all = np.array([m.labels.index(lab) for lab in dataset.labels])

    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    params = {k: v.copy() for k, v in m.params.items()}
    state = AdamState(lr=cfg.lr)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            B = sel.size
            t = rng.integers(0, s.T_train, size=B)
            noise = rng.standard_normal((B, m.latent_dim))
            use_null = rng.random(B) < cfg.cond_drop
            g = nx.Graph()
            pnodes = {k: g.leaf(v) for k, v in params.items()}
            try:
                loss = _batch_loss(m, s, pnodes, z0_all[sel], idx_all[sel], t, noise, use_null)
            except nx.NonFiniteError as exc:
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch starting {start}: {exc}") from exc
            grads = g.backward(loss)
            params = adam_step(state, params, {k: grads[n.id] for k, n in pnodes.items()})
            total += float(loss.value) * B
        for k, v in params.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"parameter {k} became non-finite after epoch {epoch}")
        curve.append(total / N)
        if epoch % 20 == 0 or epoch == cfg.epochs - 1:
            log.info("epoch %d mean loss %.5f", epoch, curve[-1])
    return dataclasses.replace(m, params=params), curve


def write_loss_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])
