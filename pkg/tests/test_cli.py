import csv
import json

from blochfga.cli import build_parser, main


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_requires_preset_or_config(tmp_path, capsys):
    assert main(["bands", "--out", str(tmp_path)]) == 2
    assert "preset" in capsys.readouterr().err


def test_bad_override_exits_2(tmp_path):
    assert main(["bands", "--preset", "ex4", "--eps", "32", "16", "--out", str(tmp_path)]) == 2


def test_bands(tmp_path):
    assert main(["bands", "--preset", "ex4", "--n-bands", "3", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "ex4_bands.csv")
    assert rows[0] == ["xi", "E_1", "E_2", "E_3"]
    assert len(rows) == 201
    manifest = json.loads((tmp_path / "ex4_bands_manifest.json").read_text())
    assert manifest["command"] == "bands" and len(manifest["config_hash"]) == 16


def test_decompose_with_eps_override(tmp_path, capsys):
    assert main(["decompose", "--preset", "ex2", "--eps", "16", "--out", str(tmp_path)]) == 0
    rows = _read_csv(tmp_path / "ex2_decomposition.csv")
    assert rows[0] == ["epsilon", "N", "error"]
    assert [r[1] for r in rows[1:]] == ["1", "2", "4", "8"]
    assert float(rows[1][0]) == 1 / 16
    assert "eps=1/16" in capsys.readouterr().out


def test_propagate_dumps_trajectories(tmp_path):
    args = ["propagate", "--preset", "ex6", "--eps", "16", "--dump-trajectories", "--out", str(tmp_path)]
    assert main(args) == 0
    field = _read_csv(tmp_path / "ex6_eps16_fga.csv")
    assert len(field) > 100
    traj = _read_csv(tmp_path / "ex6_eps16_trajectories.csv")
    assert traj[0][:4] == ["n", "I", "J", "t"]
    times = {float(r[3]) for r in traj[1:]}
    assert len(times) == load_steps() + 1


def load_steps():
    from blochfga.experiments import load_config
    return load_config("ex6").K


def test_gauge_check_cli(tmp_path):
    args = ["gauge-check", "--preset", "ex7", "--eps", "16", "--seed", "5", "--out", str(tmp_path)]
    assert main(args) == 0
    manifest = json.loads((tmp_path / "ex7_gauge-check_manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["rows"][0]["relative_discrepancy"] <= 1e-10


def test_parser_lists_subcommands():
    p = build_parser()
    for cmd in ("bands", "decompose", "propagate", "reference", "convergence", "gauge-check"):
        assert p.parse_args([cmd, "--preset", "ex4"]).command == cmd
