"""Regenerate the golden files used by the model and data tests.

Run from the repository root: ``python3 tests/golden/make_golden.py``.
Only rerun this when the checkpoint format or the forward pass changes on
purpose; the tests exist to catch unintended changes.
"""

from pathlib import Path

import numpy as np

from toydiff.container import write_container
from toydiff.data import write_image
from toydiff.model import Denoiser

HERE = Path(__file__).parent

GOLDEN_T = 123


def golden_inputs():
    rng = np.random.default_rng(2024)
    return rng.standard_normal((4, 4)), rng.standard_normal(8)


def main():
    m = Denoiser.init((4, 4), ["a", "b"], width=16, time_dim=8, cond_dim=8, seed=5)
    m.save(HERE / "denoiser.ckpt")
    z, c = golden_inputs()
    out = {"z": z, "c": c}
    for label in ("eps", "v"):
        mm = Denoiser(m.params, m.labels, m.latent_dim, m.width, m.time_dim, m.cond_dim, m.T_train,
                      m.latent_shape, parameterization=label)
        out[f"pred_{label}"] = mm.predict_noise(z, GOLDEN_T, c)
    write_container(HERE / "predict_noise.bin", b"GOLD", {"t": GOLDEN_T}, out)
    write_image(HERE / "checker2x2.pgm", np.array([[0.0, 1.0], [1.0, 0.0]]))


if __name__ == "__main__":
    main()
