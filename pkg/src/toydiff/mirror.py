"""Per-timestep prompt redescription during reconstruction.

At each sampling step the conditioning vector is re-optimized so that the
sampled latent lands on the latent recorded at the same level during
inversion.  The gradient flows through a single DDIM sample step.  The
resulting per-step embeddings form a :class:`PromptTrack` that editing
reuses.  :func:`simple_align_reconstruct` is the ablation that fits one
shared embedding for all steps instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .container import read_container, write_container
from .inversion import Reconstruction, Trajectory, sample_from
from .model import GuidanceConfig, guided_predict
from .schedule import NoiseSchedule, ddim_sample_step
from .training import AdamState, adam_step


@dataclass(frozen=True)
class RewriteConfig:
    lam: float = 1.0
    inner_steps: int = 10
    lr: float = 1e-2
    warm_start: bool = True
    bypass_optimizer: bool = False  # plain gradient step c - lam * grad, last iterate returned
    guided: bool = True  # use the guided prediction inside the rewrite loss
    align_steps: int = 0  # simple-align Adam iterations; 0 means inner_steps * T_infer

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.align_steps < 0:
            raise ValueError("align_steps must be >= 0")


@dataclass
class PromptTrack:
    """Rewritten embeddings ordered from the noisiest step down to the last."""

    embeddings: list[np.ndarray]
    initial_losses: list[float]
    final_losses: list[float]
    timesteps: list[int]

    def __post_init__(self):
        n = len(self.embeddings)
        if not (len(self.initial_losses) == len(self.final_losses) == len(self.timesteps) == n):
            raise ValueError("prompt track fields have inconsistent lengths")

    def __len__(self):
        return len(self.embeddings)

    def conds_by_level(self) -> list[np.ndarray]:
        """Embeddings indexed like :func:`sample_from` expects (level 1 first)."""
        return self.embeddings[::-1]

    def save(self, path) -> None:
        write_container(
            path,
            b"PTRK",
            {"timesteps": [int(t) for t in self.timesteps]},
            {
                "embeddings": np.stack(self.embeddings),
                "initial_losses": np.asarray(self.initial_losses),
                "final_losses": np.asarray(self.final_losses),
            },
        )

    @classmethod
    def load(cls, path) -> "PromptTrack":
        meta, arr = read_container(path, b"PTRK")
        return cls(
            list(arr["embeddings"]),
            [float(v) for v in arr["initial_losses"]],
            [float(v) for v in arr["final_losses"]],
            list(meta["timesteps"]),
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "initial_loss", "final_loss"])
            for t, a, b in zip(self.timesteps, self.initial_losses, self.final_losses):
                w.writerow([t, repr(a), repr(b)])


def rewrite_loss(z_target, z_candidate):
    """Mean squared difference between the recorded and the sampled latent."""
    diff = nx.sub(z_target, z_candidate)
    return nx.mean(nx.mul(diff, diff))


@dataclass
class StepResult:
    c: np.ndarray
    z_prev: np.ndarray
    initial_loss: float
    final_loss: float
    improved: bool
    losses: list[float] = field(default_factory=list)


def _rewrite_guidance(g: GuidanceConfig, cfg: RewriteConfig) -> GuidanceConfig:
    return g if cfg.guided else GuidanceConfig(g.scale, enabled=False)


def redescribe_step(m, s: NoiseSchedule, g: GuidanceConfig, traj: Trajectory, k: int, c_init,
                    cfg: RewriteConfig, z_cur=None) -> StepResult:
    """Optimize the condition for the step leaving level ``k`` (1..T_infer).

    The step starts from ``z_cur`` (the reconstruction's latent at level
    ``k``; defaults to the recorded ``traj.latents[k]``) and targets
    ``traj.latents[k - 1]``.  Runs ``inner_steps`` updates and evaluates the
    final iterate too.  With Adam the best-seen ``(c, z')`` pair is returned;
    in bypass mode the literal last iterate is.
    """
    if not 1 <= k <= s.T_infer:
        raise ValueError(f"step index {k} outside [1, {s.T_infer}]")
    if z_cur is None:
        z_cur = traj.latents[k]
    levels = s.levels()
    t, t_prev = levels[k], levels[k - 1]
    target = traj.latents[k - 1]
    g_r = _rewrite_guidance(g, cfg)
    state = AdamState(lr=cfg.lr)
    c = np.array(c_init, dtype=np.float64)
    losses = []
    best = None
    last = None
    for i in range(cfg.inner_steps + 1):
        graph = nx.Graph()
        cn = graph.leaf(c)
        eps = guided_predict(m, g_r, z_cur, t, cn)
        z_c = ddim_sample_step(s, z_cur, eps, t, t_prev)
        loss = rewrite_loss(target, z_c)
        lv = float(loss.value)
        losses.append(lv)
        last = (c, np.array(z_c.value), lv)
        if best is None or lv < best[2]:
            best = last
        if i == cfg.inner_steps:
            break
        if cfg.lam == 0:
            continue  # zero step: c stays bit-identical
        grad = graph.backward(loss)[cn.id]
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite rewrite gradient at t={t}, iteration {i}")
        if cfg.bypass_optimizer:
            c = c - cfg.lam * grad
        else:
            c = adam_step(state, {"c": c}, {"c": cfg.lam * grad})["c"]
    chosen = last if cfg.bypass_optimizer else best
    return StepResult(chosen[0], chosen[1], losses[0], chosen[2], chosen[2] <= losses[0], losses)


@dataclass
class MirrorResult:
    z0: np.ndarray
    track: PromptTrack
    deviations: list[float]
    rel_displacement: float


def mirror_reconstruct(m, s: NoiseSchedule, g: GuidanceConfig, traj: Trajectory, cfg: RewriteConfig) -> MirrorResult:
    levels = s.levels()
    z = traj.zT
    c_prev = traj.condition
    embs, init_l, final_l, ts, devs = [], [], [], [], []
    for k in range(len(levels) - 1, 0, -1):
        c_init = c_prev if cfg.warm_start else traj.condition
        r = redescribe_step(m, s, g, traj, k, c_init, cfg, z_cur=z)
        z, c_prev = r.z_prev, r.c
        embs.append(r.c)
        init_l.append(r.initial_loss)
        final_l.append(r.final_loss)
        ts.append(levels[k])
        devs.append(float(np.linalg.norm(z - traj.latents[k - 1])))
    rel = float(np.linalg.norm(z - traj.z0) / np.linalg.norm(traj.z0))
    return MirrorResult(z, PromptTrack(embs, init_l, final_l, ts), devs, rel)


@dataclass
class AlignResult:
    z0: np.ndarray
    c_shared: np.ndarray
    deviations: list[float]
    rel_displacement: float
    losses: list[float]
    grad_norms: list[float]


def _teacher_forced_loss(m, s, g, traj, cn):
    """Summed one-step rewrite loss over all levels, each step starting from the recorded latent."""
    levels = s.levels()
    T = s.T_infer
    Z = np.stack([traj.latents[k].reshape(-1) for k in range(1, T + 1)])
    ts = np.array(levels[1:], dtype=np.float64)
    targets = np.stack([traj.latents[k - 1].reshape(-1) for k in range(1, T + 1)])
    ones = np.ones((T, 1))
    cond = nx.matmul(ones, nx.reshape(cn, (1, m.cond_dim)))
    eps = m.forward(Z, ts, cond)
    if g.enabled:
        eps_u = m.forward(Z, ts, np.tile(m.params["null"], (T, 1)))
        eps = nx.add(eps_u, nx.scale(nx.sub(eps, eps_u), g.scale))
    ab = np.array([s.alpha_bar(t) for t in levels[1:]])[:, None]
    ab_prev = np.array([s.alpha_bar(t) for t in levels[:-1]])[:, None]
    a = np.broadcast_to(np.sqrt(ab_prev / ab), Z.shape)
    b = np.broadcast_to(np.sqrt(1 - ab_prev) - np.sqrt(ab_prev) * np.sqrt(1 - ab) / np.sqrt(ab), Z.shape)
    z_c = nx.add(a * Z, nx.mul(b, eps))
    diff = nx.sub(targets, z_c)
    return nx.scale(nx.sum_(nx.mul(diff, diff)), 1.0 / Z.shape[1])


def simple_align_reconstruct(m, s: NoiseSchedule, g: GuidanceConfig, traj: Trajectory,
                             cfg: RewriteConfig) -> AlignResult:
    """Fit one embedding to the summed per-step loss, then sample once with it."""
    g_r = _rewrite_guidance(g, cfg)
    iters = cfg.align_steps or cfg.inner_steps * s.T_infer
    c = np.array(traj.condition, dtype=np.float64)
    state = AdamState(lr=cfg.lr)
    losses, gnorms = [], []
    best_c, best_l = c, np.inf
    if cfg.lam > 0:
        for i in range(iters + 1):
            graph = nx.Graph()
            cn = graph.leaf(c)
            loss = _teacher_forced_loss(m, s, g_r, traj, cn)
            lv = float(loss.value)
            losses.append(lv)
            if lv < best_l:
                best_c, best_l = c, lv
            if i == iters:
                break
            grad = graph.backward(loss)[cn.id]
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(f"non-finite alignment gradient at iteration {i}")
            gnorms.append(float(np.linalg.norm(grad)))
            if cfg.bypass_optimizer:
                c = c - cfg.lam * grad
            else:
                c = adam_step(state, {"c": c}, {"c": cfg.lam * grad})["c"]
        if cfg.bypass_optimizer:
            best_c = c
    rec: Reconstruction = sample_from(m, s, g, traj, [best_c] * s.T_infer)
    return AlignResult(rec.z0, best_c, rec.deviations, rec.rel_displacement(traj.z0), losses, gnorms)
