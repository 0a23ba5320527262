import csv
import json

import pytest
import yaml
from click.testing import CliRunner

from dynrmst.cli import EXIT_CONFIG, EXIT_DATA, load_config, main

from conftest import DATA_DIR


def write_config(path, **extra):
    cfg = {
        "data": str(DATA_DIR / "pbc2.csv"),
        "schema": str(DATA_DIR / "pbc2_schema.yaml"),
        "out": str(path.parent / "out"),
        "cv": {"reps": 2, "seed": 3},
        **extra,
    }
    path.write_text(yaml.safe_dump(cfg))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def config(tmp_path):
    return write_config(tmp_path / "run.yaml")


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    base = tmp_path_factory.mktemp("fit")
    cfg = write_config(base / "run.yaml")
    res = CliRunner().invoke(main, ["fit", "--config", str(cfg), "--export-stacked"])
    assert res.exit_code == 0, res.output
    return cfg, base / "out"


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def test_summary(config, tmp_path):
    res = run("summary", "--config", config)
    assert res.exit_code == 0, res.output
    stats = {r["statistic"]: r["value"] for r in read_csv(tmp_path / "out" / "summary.csv")}
    assert stats["n_subjects"] == "312" and stats["n_events"] == "140"
    meta = json.loads((tmp_path / "out" / "summary.meta.json").read_text())
    assert meta["command"] == "summary" and meta["config"]["cv_seed"] == 3


def test_fit_outputs(fitted):
    _, out = fitted
    coefs = read_csv(out / "coefficients.csv")
    assert len(coefs) == 24
    assert {r["term"] for r in read_csv(out / "selection.csv")} >= {"prothrombin"}
    assert list(read_csv(out / "static.csv")[0]) == ["term", "coefficient", "ci_lower", "ci_upper", "z", "p"]
    assert len(read_csv(out / "stacked.csv")) > 312


def test_fit_is_byte_identical(fitted, tmp_path):
    cfg, out = fitted
    res = run("fit", "--config", cfg, "--out", tmp_path / "again")
    assert res.exit_code == 0
    for name in ("coefficients.csv", "selection.csv", "static.csv", "model.json"):
        assert (tmp_path / "again" / name).read_bytes() == (out / name).read_bytes()


def test_predict(fitted):
    cfg, out = fitted
    res = run("predict", "--config", cfg, "--ids", "92", "--at", "0,5", "--static")
    assert res.exit_code == 0, res.output
    rows = read_csv(out / "predictions.csv")
    assert [r["s"] for r in rows] == ["0.0", "5.0"]
    assert float(rows[0]["crmst"]) == pytest.approx(2.656, abs=5e-3)
    assert "static_rmst" in rows[0]


def test_predict_new_patient(fitted, tmp_path):
    cfg, out = fitted
    header = "id,year,drug,sex,serBilir,albumin,prothrombin,edema,histologic,age,SGOT\n"
    body = "new,0,placebo,female,1.2,3.5,10.5,No edema,3,50,100\nnew,1.5,placebo,female,3.0,3.1,11.5,No edema,4,50,120\n"
    path = tmp_path / "patient.csv"
    path.write_text(header + body)
    res = run("predict", "--config", cfg, "--patients", path, "--at", "0:3:1.5")
    assert res.exit_code == 0, res.output
    vals = [float(r["crmst"]) for r in read_csv(out / "predictions.csv")]
    assert len(vals) == 3 and vals[1] < vals[0]


def test_predict_outside_grid(fitted):
    cfg, _ = fitted
    res = run("predict", "--config", cfg, "--ids", "92", "--at", "6")
    assert res.exit_code == EXIT_DATA
    assert "outside grid" in res.output


def test_predict_unknown_id(fitted):
    res = run("predict", "--config", fitted[0], "--ids", "nobody")
    assert res.exit_code == EXIT_DATA


def test_curves(fitted):
    cfg, out = fitted
    res = run("curves", "--config", cfg, "--covariate", "age", "--covariate", "drug[D-penicil]", "--points", 11)
    assert res.exit_code == 0, res.output
    rows = read_csv(out / "curves.csv")
    age = [float(r["point"]) for r in rows if r["term"] == "age"]
    assert len(set(age)) == 1
    drug = [(float(r["s"]), float(r["point"])) for r in rows if r["term"] == "drug[D-penicil]"]
    for s, p in drug:
        assert p == pytest.approx(-0.004 - 0.272 * s / 5, abs=2e-3)


def test_no_select_main_effects(config, tmp_path):
    res = run("fit", "--config", config, "--no-select")
    assert res.exit_code == 0, res.output
    coefs = read_csv(tmp_path / "out" / "coefficients.csv")
    assert len(coefs) == 13
    assert all(r["time_function"] == "1" for r in coefs if r["term"] != "(Intercept)")


def test_evaluate(config, tmp_path):
    res = run("evaluate", "--config", config, "--grid", "0:4:2")
    assert res.exit_code == 0, res.output
    rows = read_csv(tmp_path / "out" / "metrics.csv")
    assert len(rows) == 3 * 2 * 2
    assert len(read_csv(tmp_path / "out" / "replicates.csv")) == 2 * 3 * 2 * 2


def test_empty_data_file(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    cfg = write_config(tmp_path / "run.yaml", data=str(tmp_path / "empty.csv"))
    res = run("summary", "--config", cfg)
    assert res.exit_code == EXIT_DATA


def test_bad_reps(config):
    assert run("evaluate", "--config", config, "--reps", 0).exit_code == EXIT_CONFIG


def test_bad_grid(config):
    assert run("fit", "--config", config, "--grid", "0-5").exit_code != 0


def test_missing_config():
    assert run("summary", "--config", "/no/such.yaml").exit_code == 2


def test_config_errors(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("window: 5\n")
    res = run("summary", "--config", p)
    assert res.exit_code == EXIT_CONFIG
    with pytest.raises(ValueError):
        load_config(write_config(tmp_path / "d.yaml", window=-1))


def test_shipped_config_loads():
    from conftest import PBC_CONFIG

    cfg = load_config(PBC_CONFIG)
    assert cfg.data.exists() and cfg.schema.exists()
    assert len(cfg.grid.landmarks) == 26 and cfg.cv_seed == 2021
