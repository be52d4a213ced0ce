import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from toydiff import data, schedule, training  # noqa: E402
from toydiff.cli import main  # noqa: E402
from toydiff.config import RunConfig  # noqa: E402
from toydiff.model import Denoiser  # noqa: E402


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The shipped default configuration run end to end through the CLI, once per session."""
    out = tmp_path_factory.mktemp("default_run")
    t0 = time.perf_counter()
    assert main(["pipeline", "--out", str(out)]) == 0
    (out.parent / "default_run_seconds.txt").write_text(repr(time.perf_counter() - t0))
    return out


@pytest.fixture(scope="session")
def trained(default_run):
    return Denoiser.load(default_run / "model.ckpt")


@pytest.fixture(scope="session")
def default_cfg():
    return RunConfig.default()


@pytest.fixture(scope="session")
def eval_set(default_cfg):
    return data.generate(default_cfg.eval_spec())


@pytest.fixture(scope="session")
def eps_model(default_cfg):
    """Default sizes, but predicting the noise directly instead of through the skip path."""
    cfg = default_cfg
    ds = data.generate(cfg.dataset_spec())
    m = Denoiser.init((cfg["data.size"], cfg["data.size"]), list(cfg.dataset_spec().domains),
                      cond_dim=cfg["model.cond_dim"], seed=0, parameterization="eps")
    m, _ = training.train(m, schedule.make_schedule(), ds, cfg.train_config())
    return m
