"""DDIM inversion with a recorded trajectory, and plain reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .container import ContainerError, read_container, write_container
from .model import GuidanceConfig, guided_predict
from .schedule import NoiseSchedule, ddim_invert_step, ddim_sample_step, make_schedule


@dataclass
class Trajectory:
    """Latents at every visited level, clean image first.

    ``eps[k]`` is the noise prediction used for the step from level ``k`` to
    level ``k + 1``; reconstruction can replay it to take noise-model error
    out of the picture.
    """

    latents: list[np.ndarray]
    eps: list[np.ndarray]
    condition: np.ndarray
    guidance: GuidanceConfig
    schedule: NoiseSchedule

    def __post_init__(self):
        if len(self.latents) != self.schedule.T_infer + 1 or len(self.eps) != self.schedule.T_infer:
            raise ValueError(
                f"trajectory with {len(self.latents)} latents does not match T_infer={self.schedule.T_infer}"
            )

    @property
    def z0(self) -> np.ndarray:
        return self.latents[0]

    @property
    def zT(self) -> np.ndarray:
        return self.latents[-1]

    def save(self, path) -> None:
        s = self.schedule
        meta = {
            "T_train": s.T_train,
            "T_infer": s.T_infer,
            "beta_start": s.beta_start,
            "beta_end": s.beta_end,
            "guidance_scale": self.guidance.scale,
            "guidance_enabled": self.guidance.enabled,
        }
        write_container(
            path,
            b"TRAJ",
            meta,
            {"latents": np.stack(self.latents), "eps": np.stack(self.eps), "condition": self.condition},
        )

    @classmethod
    def load(cls, path) -> "Trajectory":
        meta, arr = read_container(path, b"TRAJ")
        try:
            s = make_schedule(meta["T_train"], meta["beta_start"], meta["beta_end"], meta["T_infer"])
            g = GuidanceConfig(meta["guidance_scale"], meta["guidance_enabled"])
            return cls(list(arr["latents"]), list(arr["eps"]), arr["condition"], g, s)
        except KeyError as exc:
            raise ContainerError(f"{path}: trajectory lacks field {exc}") from None


def invert(m, s: NoiseSchedule, z0, c, g: GuidanceConfig, guide_inversion: bool = True) -> Trajectory:
    """Run the DDIM step algebra upward from ``z0``, recording every latent.

    The model is queried at the current latent with the *destination*
    timestep.  ``guide_inversion=False`` uses the purely conditional
    prediction on this leg while still recording ``g`` for sampling.
    """
    z = np.array(z0, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("z0 contains non-finite values")
    c = np.array(c, dtype=np.float64)
    g_inv = g if guide_inversion else GuidanceConfig(g.scale, enabled=False)
    levels = s.levels()
    latents, eps_list = [z], []
    for k in range(1, len(levels)):
        try:
            eps = guided_predict(m, g_inv, z, levels[k], c)
            z = ddim_invert_step(s, z, eps, levels[k - 1], levels[k])
        except nx.NonFiniteError as exc:
            raise FloatingPointError(f"inversion diverged at step {k} (t={levels[k]}): {exc}") from exc
        latents.append(z)
        eps_list.append(eps)
    return Trajectory(latents, eps_list, c, g, s)


@dataclass
class Reconstruction:
    z0: np.ndarray
    deviations: list[float]  # |z'_t - z_t| for each level from T-1 down to clean

    def rel_displacement(self, z0_ref) -> float:
        return float(np.linalg.norm(self.z0 - z0_ref) / np.linalg.norm(z0_ref))


def sample_from(m, s: NoiseSchedule, g: GuidanceConfig, traj: Trajectory, conds) -> Reconstruction:
    """Sample from ``traj.zT`` with ``conds[k]`` at the step leaving level ``k + 1``."""
    levels = s.levels()
    z = traj.zT
    devs = []
    for k in range(len(levels) - 1, 0, -1):
        try:
            eps = guided_predict(m, g, z, levels[k], conds[k - 1])
            z = ddim_sample_step(s, z, eps, levels[k], levels[k - 1])
        except nx.NonFiniteError as exc:
            raise FloatingPointError(f"sampling diverged at step {k} (t={levels[k]}): {exc}") from exc
        devs.append(float(np.linalg.norm(z - traj.latents[k - 1])))
    return Reconstruction(z, devs)


def reconstruct_plain(m, s: NoiseSchedule, traj: Trajectory, c=None, g: GuidanceConfig | None = None,
                      replay: bool = False) -> Reconstruction:
    """Sample back to the clean level with one fixed condition.

    ``replay=True`` reuses the cached inversion noise instead of querying
    the model, which must reproduce ``z0`` up to rounding.
    """
    if replay:
        levels = s.levels()
        z = traj.zT
        devs = []
        for k in range(len(levels) - 1, 0, -1):
            z = ddim_sample_step(s, z, traj.eps[k - 1], levels[k], levels[k - 1])
            devs.append(float(np.linalg.norm(z - traj.latents[k - 1])))
        return Reconstruction(z, devs)
    c = traj.condition if c is None else np.asarray(c, dtype=np.float64)
    return sample_from(m, s, traj.guidance if g is None else g, traj, [c] * s.T_infer)
