import json

import numpy as np
import pytest
import yaml

from blochfga.exceptions import InvalidConfigError
from blochfga.experiments import (
    PRESETS,
    ExperimentConfig,
    build_initial_data,
    config_hash,
    load_config,
    run_convergence_study,
    run_decomposition_study,
    run_gauge_check,
)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_load(name):
    cfg = load_config(name)
    assert cfg.name == name
    assert cfg.eps_list == sorted(cfg.eps_list, reverse=True)


def test_unknown_preset_and_keys(tmp_path):
    with pytest.raises(InvalidConfigError):
        load_config("ex9")
    with pytest.raises(InvalidConfigError):
        load_config("ex4", overrides={"bogus": 1})


def test_validation_errors():
    with pytest.raises(InvalidConfigError):
        load_config("ex4", overrides={"eps_list": [1 / 16, 1 / 8]})
    with pytest.raises(InvalidConfigError):
        load_config("ex4", overrides={"study": "other"})
    with pytest.raises(InvalidConfigError):
        load_config("ex2", overrides={"band_counts": [1, 9]})
    with pytest.raises(InvalidConfigError):
        ExperimentConfig(name="x", initial={"amplitude": {}})


def test_file_merge_yaml_and_json(tmp_path):
    over = {"T": 0.1, "lattice": {"params": {"alpha": 30.0}}}
    y = tmp_path / "run.yaml"
    y.write_text(yaml.safe_dump(over))
    j = tmp_path / "run.json"
    j.write_text(json.dumps(over))
    a = load_config("ex6", y)
    b = load_config("ex6", j)
    assert a.T == 0.1 and a.lattice["params"]["alpha"] == 30.0
    assert a.lattice["kind"] == "gaussian-bump"
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(load_config("ex6"))


def test_config_from_file_only(tmp_path):
    d = dict(PRESETS["ex4"])
    d.pop("name")
    p = tmp_path / "mine.json"
    p.write_text(json.dumps(d))
    assert load_config(path=p).name == "mine"


def test_initial_data_builders():
    cfg = load_config("ex2")
    eps = 1 / 32
    psi0 = build_initial_data(cfg, eps)
    x = np.array([0.0, 0.1])
    expect = np.exp(-50 * x ** 2) * np.cos((x - 0.5) / eps) * np.exp(1j * (0.3 * (x - 0.5) + 0.1 * np.sin(x - 0.5)) / eps)
    assert np.allclose(psi0(x), expect, rtol=1e-13)
    with pytest.raises(InvalidConfigError):
        build_initial_data(load_config("ex2", overrides={"initial": {"amplitude": {"kind": "box"}}}), eps)
    assert build_initial_data(load_config("ex5"), 1 / 16).band == 1


def test_decomposition_study_is_deterministic():
    cfg = load_config("ex2", overrides={"eps_list": [1 / 16], "band_counts": [1, 8]})
    a = run_decomposition_study(cfg)
    b = run_decomposition_study(cfg)
    assert [r["error"] for r in a["rows"]] == [r["error"] for r in b["rows"]]
    errs = {r["N"]: r["error"] for r in a["rows"]}
    assert errs[8] < errs[1]
    assert not a["failures"]


def test_convergence_study_small():
    cfg = load_config("ex4", overrides={"eps_list": [1 / 8, 1 / 16]})
    res = run_convergence_study(cfg, self_check=False)
    assert not res["failures"]
    assert len(res["rows"]) == 2 and "pairwise_rate" in res["rows"][1]
    assert res["summary"]["lsq_slope"] == pytest.approx(res["rows"][1]["pairwise_rate"])
    assert all(0 < r["error"] < 0.2 for r in res["rows"])


def test_projected_initial_error_small():
    cfg = load_config("ex5", overrides={"eps_list": [1 / 32], "T": 0.05})
    res = run_convergence_study(cfg, self_check=False)
    assert res["rows"][0]["initial_error"] <= 1e-6


def test_gauge_check_small():
    cfg = load_config("ex6", overrides={"eps_list": [1 / 16], "n_bands": 4, "band_counts": [4]})
    res = run_gauge_check(cfg, seed=3)
    assert res["rows"][0]["relative_discrepancy"] <= 1e-10
