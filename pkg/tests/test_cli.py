import csv
import json

import pytest
import yaml
from click.testing import CliRunner

from pignpi.cli import main
from pignpi.pipeline import check_layout, load_checkpoint
from pignpi.data import FeatureLayout, analytic_dataset
from pignpi.errors import ConfigurationError
from pignpi.sim import simulate_law

TINY = {
    "name": "tiny",
    "dataset": {"law": "spring", "dim": 2, "n_particles": 4, "n_steps": 40, "seed": 0},
    "model": {"kind": ["pignpi_force", "gnplus"], "hidden": 8, "layers": 1},
    "train": {"max_epochs": 1, "batch_size": 8},
    "generalization": {"n_particles": 5, "n_steps": 30},
    "repetitions": 2,
}


@pytest.fixture
def tiny(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    return cfg, tmp_path / "out"


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_simulate_is_idempotent(tiny):
    cfg, out = tiny
    r = invoke("simulate", "--config", cfg, "--out", out)
    assert r.exit_code == 0, r.output
    files = sorted((out / "datasets").glob("*.traj"))
    assert len(files) == 2  # training set and the 5-particle generalization set
    before = [f.read_bytes() for f in files]
    assert invoke("simulate", "--config", cfg, "--out", out, "--force").exit_code == 0
    assert [f.read_bytes() for f in files] == before
    manifest = json.loads(files[0].with_suffix(".manifest.json").read_text())
    assert manifest["law"]["kind"] == "spring"


def test_train_evaluate_render_report(tiny):
    cfg, out = tiny
    r = invoke("train", "--config", cfg, "--out", out)
    assert r.exit_code == 0, r.output
    run = out / "runs" / "tiny"
    rep0 = run / "kind-pignpi_force" / "rep0"
    for name in ("config.yaml", "split.json", "manifest.json", "history.csv", "best.json",
                 "final.json", "report.json", "generalization.json"):
        assert (rep0 / name).exists(), name
    gn = run / "kind-gnplus" / "rep1"
    assert (gn / "generalization.txt").read_text().startswith("GN+")
    assert not (gn / "generalization.json").exists()
    rows = list(csv.DictReader((run / "summary.csv").open()))
    assert {r["model"] for r in rows} == {"pignpi_force", "gnplus"}
    assert all(r["n"] == "2" for r in rows)

    # refuses to overwrite without --force
    assert invoke("train", "--config", cfg, "--out", out).exit_code == 2

    r = invoke("evaluate", run, "--out", out, "--split", "valid")
    assert r.exit_code == 0, r.output
    assert (rep0 / "report_valid.json").exists()

    r = invoke("render", run, "--out", out, "--cells", 5)
    assert r.exit_code == 0, r.output
    assert len(list(run.rglob("field_*.csv"))) == 4

    r = invoke("report", run)
    assert r.exit_code == 0 and "mae_ef" in r.output


def test_sweep_axes_expand(tiny, tmp_path):
    cfg, out = tiny
    raw = dict(TINY, model={"kind": "pignpi_force", "hidden": 4, "layers": 1},
               repetitions=1, generalization=None, name="sw")
    p = tmp_path / "sw.yaml"
    p.write_text(yaml.safe_dump(raw))
    r = invoke("sweep", "--config", p, "--out", out, "--axis", "beta")
    assert r.exit_code == 0, r.output
    assert r.output.startswith("5 cells x 1 repetitions")


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: {kind: transformer}\n")
    assert invoke("train", "--config", bad, "--out", tmp_path).exit_code == 2
    assert invoke("train", "--config", tmp_path / "missing.yaml").exit_code == 2
    empty = tmp_path / "empty_run"
    empty.mkdir()
    assert invoke("evaluate", empty, "--out", tmp_path).exit_code == 3
    assert invoke("report", empty).exit_code == 3


def test_layout_mismatch_refused(tiny):
    cfg, out = tiny
    assert invoke("train", "--config", cfg, "--out", out).exit_code == 0
    model = load_checkpoint(out / "runs" / "tiny" / "kind-pignpi_force" / "rep0" / "best.json")
    ds3 = analytic_dataset(simulate_law("spring", 4, 3, 12))
    with pytest.raises(ConfigurationError):
        check_layout(model, ds3)
    assert model.spec.layout == FeatureLayout(2)
