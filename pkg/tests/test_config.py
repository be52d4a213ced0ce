from pathlib import Path

import pytest

from toydiff.config import DEFAULTS, ConfigError, RunConfig

CONFIGS = Path(__file__).parent.parent / "configs"


def test_shipped_defaults_file_matches_builtin_defaults():
    cfg = RunConfig.load(CONFIGS / "defaults.ini")
    assert cfg.values == RunConfig.default().values


def test_dump_round_trip():
    cfg = RunConfig.from_text("[rewrite]\nlr = 0.5\n[run]\nseed = 4\n")
    again = RunConfig.from_text(cfg.dump())
    assert again.values == cfg.values and again.hash() == cfg.hash()


def test_typed_values():
    cfg = RunConfig.from_text("[guidance]\nenabled = no\nscale = 3\n[schedule]\nT_infer = 12\n")
    assert cfg["guidance.enabled"] is False
    assert cfg.guidance().scale == 3.0
    assert cfg.schedule().T_infer == 12


@pytest.mark.parametrize(
    "text, match",
    [
        ("[model]\nwidht = 3\n", "unknown keys"),
        ("[nosuch]\nx = 1\n", "unknown keys"),
        ("[train]\nepochs = many\n", "train.epochs"),
        ("[guidance]\nenabled = maybe\n", "boolean"),
        ("[guidance]\nscale = -2\n", "scale"),
        ("[schedule]\nT_infer = 5000\n", "T_infer"),
        ("[eval]\ntarget = ring\n", "eval.target"),
        ("[model]\ntime_dim = 7\n", "even"),
        ("[model]\nparameterization = x0\n", "parameterization"),
        ("not an ini", "source|section"),
    ],
)
def test_validation_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_text(text)


def test_hash_ignores_output_dir_only():
    a = RunConfig.default()
    assert a.replace(run__out="elsewhere").hash() == a.hash()
    assert a.replace(run__seed=1).hash() != a.hash()
    assert a.replace(rewrite__lr=0.02).hash() != a.hash()


def test_every_key_has_a_section():
    assert all(k.count(".") == 1 for k in DEFAULTS)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load("/nonexistent/x.ini")
