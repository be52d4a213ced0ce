"""Conditional noise-prediction MLP with classifier-free guidance.

Input layer sees ``[flattened z_t | sinusoidal time features | c]``; three
SiLU hidden layers follow, then a linear head back to latent size.  All
math runs through :mod:`toydiff.numerics`, so gradients with respect to the
weights or the conditioning vector come from the same forward code.

With ``parameterization="v"`` (the default) the network output ``F`` is
combined with a schedule-aware skip path,

    eps_hat = sqrt(1 - alpha_bar_t) * z_t + sqrt(alpha_bar_t) * F,

which is the identity ``eps = sqrt(1 - ab) z + sqrt(ab) v`` with ``F``
playing the role of the velocity.  At high noise the prediction is then
consistent with ``z_t`` by construction and the network's error lives in
the content it predicts, which is the part the conditioning can steer.
``parameterization="eps"`` returns ``F`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .container import ContainerError, read_container, write_container
from .schedule import linear_beta_schedule

PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "emb", "null")
PARAMETERIZATIONS = ("v", "eps")


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5
    enabled: bool = True

    def __post_init__(self):
        if not self.scale >= 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.scale}")


def time_features(t, dim: int, T_train: int) -> np.ndarray:
    """Sin/cos features with angular frequencies geometric from 1 down to 1/T_train."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(float(T_train)) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class Denoiser:
    """eps_theta(z_t, t, c) plus the label embedding table and null embedding."""

    params: dict[str, np.ndarray]
    labels: list[str]
    latent_dim: int
    width: int = 256
    time_dim: int = 32
    cond_dim: int = 64
    T_train: int = 1000
    latent_shape: tuple[int, ...] = field(default=())
    beta_start: float = 1e-4
    beta_end: float = 0.02
    parameterization: str = "v"

    def __post_init__(self):
        if not self.latent_shape:
            self.latent_shape = (self.latent_dim,)
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        self._alpha_bars = linear_beta_schedule(self.T_train, self.beta_start, self.beta_end).alpha_bars
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"parameter {k} is not finite")

    @classmethod
    def init(
        cls,
        latent_shape,
        labels,
        width: int = 256,
        time_dim: int = 32,
        cond_dim: int = 64,
        T_train: int = 1000,
        seed: int = 0,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        parameterization: str = "v",
    ) -> "Denoiser":
        latent_shape = tuple(int(d) for d in np.atleast_1d(latent_shape))
        D = int(np.prod(latent_shape))
        rng = np.random.default_rng(seed)
        dims = [D + time_dim + cond_dim, width, width, width, D]
        params = {}
        for i in range(4):
            bound = 1.0 / np.sqrt(dims[i])
            params[f"w{i + 1}"] = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
            params[f"b{i + 1}"] = rng.uniform(-bound, bound, size=(1, dims[i + 1]))
        params["emb"] = 0.1 * rng.standard_normal((len(labels), cond_dim))
        params["null"] = 0.1 * rng.standard_normal(cond_dim)
        return cls(params, list(labels), D, width, time_dim, cond_dim, T_train, latent_shape,
                   beta_start, beta_end, parameterization)

    # -- conditioning -------------------------------------------------------

    @property
    def null_embedding(self) -> np.ndarray:
        return self.params["null"].copy()

    def embed_label(self, label: str) -> np.ndarray:
        try:
            i = self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown condition label {label!r}; known: {self.labels}") from None
        return self.params["emb"][i].copy()

    # -- forward ------------------------------------------------------------

    def forward(self, x, t, cond, params=None):
        """Batched forward: ``x`` (B, D), ``t`` (B,), ``cond`` (B, cond_dim).

        ``params`` defaults to the stored weights; pass a dict of graph nodes
        to differentiate with respect to them.
        """
        p = self.params if params is None else params
        B = np.shape(nx.value_of(x))[0]
        ones = np.ones((B, 1))
        h = nx.concat([x, time_features(t, self.time_dim, self.T_train), cond], axis=1)
        for i in (1, 2, 3):
            h = nx.silu(nx.add(nx.matmul(h, p[f"w{i}"]), nx.matmul(ones, p[f"b{i}"])))
        out = nx.add(nx.matmul(h, p["w4"]), nx.matmul(ones, p["b4"]))
        if self.parameterization == "eps":
            return out
        ab = self._alpha_bars[np.asarray(t, dtype=np.int64)][:, None]
        shape = (B, self.latent_dim)
        skip = np.broadcast_to(np.sqrt(1.0 - ab), shape)
        gain = np.broadcast_to(np.sqrt(ab), shape)
        return nx.add(nx.mul(x, skip), nx.mul(out, gain))

    def predict_noise(self, z_t, t: int, c, params=None):
        """Noise prediction for one latent; output has the shape of ``z_t``."""
        zshape = np.shape(nx.value_of(z_t))
        if int(np.prod(zshape)) != self.latent_dim:
            raise nx.ShapeError(f"latent of shape {zshape} does not match model latent size {self.latent_dim}")
        cshape = np.shape(nx.value_of(c))
        if cshape != (self.cond_dim,):
            raise nx.ShapeError(f"condition of shape {cshape} does not match cond_dim ({self.cond_dim},)")
        if not 0 <= int(t) < self.T_train:
            raise ValueError(f"timestep {t} outside [0, {self.T_train})")
        out = self.forward(
            nx.reshape(z_t, (1, self.latent_dim)),
            np.array([t], dtype=np.float64),
            nx.reshape(c, (1, self.cond_dim)),
            params,
        )
        return nx.reshape(out, zshape)

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "labels": self.labels,
            "latent_shape": list(self.latent_shape),
            "width": self.width,
            "time_dim": self.time_dim,
            "cond_dim": self.cond_dim,
            "T_train": self.T_train,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "parameterization": self.parameterization,
        }
        write_container(path, b"CKPT", meta, {k: self.params[k] for k in PARAM_ORDER})

    @classmethod
    def load(cls, path) -> "Denoiser":
        meta, arrays = read_container(path, b"CKPT")
        missing = set(PARAM_ORDER) - set(arrays)
        if missing:
            raise ContainerError(f"{path}: checkpoint lacks parameters {sorted(missing)}")
        shape = tuple(meta["latent_shape"])
        return cls(
            {k: arrays[k] for k in PARAM_ORDER},
            list(meta["labels"]),
            int(np.prod(shape)),
            meta["width"],
            meta["time_dim"],
            meta["cond_dim"],
            meta["T_train"],
            shape,
            meta["beta_start"],
            meta["beta_end"],
            meta["parameterization"],
        )


def guided_predict(m, g: GuidanceConfig, z_t, t: int, c, params=None):
    """eps_u + s * (eps_c - eps_u); the unconditional branch uses the null embedding."""
    eps_c = m.predict_noise(z_t, t, c, params)
    if not g.enabled:
        return eps_c
    null = m.params["null"] if params is None else params["null"]
    eps_u = m.predict_noise(z_t, t, null, params)
    return nx.add(eps_u, nx.scale(nx.sub(eps_c, eps_u), g.scale))
