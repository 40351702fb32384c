import pytest

from pignpi.config import (ACTIVATION_SWEEP, ALPHA_SWEEP, BETA_SWEEP, ExperimentConfig,
                           repetition_seed)
from pignpi.errors import ConfigurationError


def test_defaults_validate():
    cfg = ExperimentConfig()
    assert len(cfg.cells()) == 1 and cfg.cells()[0]["cell"] == "base"
    assert cfg.raw["repetitions"] == 5


def test_standard_sweeps_enumerate():
    assert ALPHA_SWEEP == [0.1, 1.0, 10.0, 100.0]
    assert BETA_SWEEP == [1e-7, 5e-7, 1e-6, 5e-6, 1e-5]
    assert len(ACTIVATION_SWEEP) == 7
    cfg = ExperimentConfig({"train": {"alpha": ALPHA_SWEEP}, "model": {"kind": "baseline"}})
    assert [c["train"]["alpha"] for c in cfg.cells()] == ALPHA_SWEEP
    cfg = ExperimentConfig({"noise": {"beta": BETA_SWEEP}})
    assert len(cfg.cells()) == 5
    cfg = ExperimentConfig({"model": {"activation": ACTIVATION_SWEEP}})
    assert {c["model"]["activation"] for c in cfg.cells()} == set(ACTIVATION_SWEEP)


def test_cartesian_product_and_labels():
    cfg = ExperimentConfig({"dataset": {"law": ["spring", "charge"], "dim": [2, 3]},
                            "model": {"kind": ["pignpi_force", "baseline"]}})
    cells = cfg.cells()
    assert len(cells) == 8
    assert len({c["cell"] for c in cells}) == 8
    assert "law=spring" in cells[0]["cell"] and "kind=pignpi_force" in cells[0]["cell"]


def test_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig({"name": "x", "generalization": {"n_particles": 12, "n_steps": 1500}})
    p = tmp_path / "c.yaml"
    p.write_text(cfg.to_yaml())
    back = ExperimentConfig.load(p)
    assert back.raw == cfg.raw and back.digest() == cfg.digest()


@pytest.mark.parametrize("raw", [
    {"dataset": {"law": "gravity"}},
    {"dataset": {"dim": 4}},
    {"model": {"kind": "transformer"}},
    {"model": {"activation": "swishy"}},
    {"train": {"alpha": -1}},
    {"train": {"batch_size": 0}},
    {"noise": {"beta": -1e-6}},
    {"repetitions": 0},
    {"generalization": {"n_particles": 12}},
    {"trian": {}},
    {"model": {"widht": 3}},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(raw)


def test_bad_yaml():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_yaml("a: [1, 2")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_yaml("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load("/nonexistent.yaml")


def test_repetition_seeds():
    assert repetition_seed(3, 0) == 3
    assert len({repetition_seed(0, r) for r in range(5)}) == 5
