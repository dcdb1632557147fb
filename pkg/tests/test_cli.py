import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from cbomf.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from cbomf.config import SCHEMA_VERSION, SUBCOMMANDS, default_config_path, load_config
from cbomf.errors import ConfigError

HEADERS = {
    "optimize": ("history.csv", ["t", "x_alpha_1", "x_alpha_2", "variance", "ess"]),
    "fphi-scaling": ("fphi.csv", None),
    "meanfield-converge": ("w2.csv", None),
    "laplace": ("laplace.csv", ["replica", "alpha", "min", "laplace", "upper_bound", "gap", "within_bracket"]),
    "pde-compare": ("pde_compare.csv", ["N", "seed", "l1"]),
    "pso": ("pso.csv", None),
    "assumptions": ("assumptions.csv", ["check", "status", "value", "constant"]),
    "increment-probe": ("increments.csv", ["delta", "mean_sq", "stderr", "fitted_bound"]),
}

# reduced sizes so the unit suite stays quick; the shipped configs run in the acceptance suite
SMALL = {
    "fphi-scaling": {"experiment": {"n_list": [16, 32], "replicas": 30}},
    "meanfield-converge": {"experiment": {"n_list": [16, 32], "seeds": [0, 1], "reference_n": 1024}},
    "pde-compare": {"experiment": {"n_list": [16, 32], "seeds": [0, 1]}},
}


def _config(subcommand, tmp_path, **overrides):
    data = yaml.safe_load(default_config_path(subcommand).read_text())
    for section, values in {**SMALL.get(subcommand, {}), **overrides}.items():
        if isinstance(values, dict) and isinstance(data.get(section), dict):
            data[section].update(values)
        else:
            data[section] = values
    path = tmp_path / f"{subcommand}.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def _run(subcommand, tmp_path, *extra, **overrides):
    out = tmp_path / "out"
    code = main([subcommand, "--config", str(_config(subcommand, tmp_path, **overrides)), "--out", str(out), *extra])
    return code, out


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def _summary(out, name="summary"):
    return json.loads((out / f"{name}.json").read_text())


def test_shipped_configs_validate():
    for name in SUBCOMMANDS:
        cfg = load_config(default_config_path(name))
        assert cfg.subcommand == name
        assert cfg.sim.seed is not None


@pytest.mark.parametrize("subcommand", SUBCOMMANDS)
def test_every_subcommand_writes_its_schema(subcommand, tmp_path):
    code, out = _run(subcommand, tmp_path)
    assert code == EXIT_OK
    fname, header = HEADERS[subcommand]
    rows = _read(out / fname)
    if header is not None:
        assert rows[0] == header
    assert len(rows) > 1
    summary = _summary(out, "result" if subcommand == "optimize" else "summary")
    assert summary["schema_version"] == SCHEMA_VERSION
    assert summary["subcommand"] == subcommand
    assert summary["config"]["sim"]["seed"] == load_config(default_config_path(subcommand)).sim.seed


def test_unknown_key_is_rejected(tmp_path):
    code, out = _run("optimize", tmp_path, sim={"n_particle": 3})
    assert code == EXIT_CONFIG and not out.exists()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_missing_required_keys(tmp_path):
    data = yaml.safe_load(default_config_path("fphi-scaling").read_text())
    del data["experiment"]["n_list"]
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(data))
    assert main(["fphi-scaling", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    data = yaml.safe_load(default_config_path("optimize").read_text())
    del data["sim"]["seed"]
    p.write_text(yaml.safe_dump(data))
    assert main(["optimize", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_invalid_reference_and_mismatched_subcommand(tmp_path):
    code, _ = _run("meanfield-converge", tmp_path, experiment={"reference": "exact"})
    assert code == EXIT_CONFIG
    p = _config("optimize", tmp_path)
    assert main(["pso", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["no-such-command"]) == EXIT_CONFIG
    assert main(["optimize", "--threads", "0", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_blow_up_exits_with_numerical_code(tmp_path):
    code, _ = _run("optimize", tmp_path, sim={"sigma": 1e4, "dt": 1.0, "t_final": 200.0, "n_particles": 4})
    assert code == EXIT_NUMERICAL


def test_single_particle_optimize_stays_put(tmp_path):
    code, out = _run("optimize", tmp_path, sim={"n_particles": 1, "sigma": 0.0}, init={"kind": "dirac", "point": [0.7, -0.2]})
    assert code == EXIT_OK
    assert _summary(out, "result")["results"]["best_point"] == [0.7, -0.2]


def test_noiseless_fphi_is_flagged_degenerate(tmp_path):
    code, out = _run("fphi-scaling", tmp_path, sim={"sigma": 0.0})
    assert code == EXIT_OK
    assert _summary(out)["results"]["degenerate"] is True


def test_large_n_reference_with_matching_run_is_zero(tmp_path):
    code, out = _run("meanfield-converge", tmp_path,
                     experiment={"n_list": [16, 64], "seeds": [3], "reference": "large_n", "reference_n": 64, "reference_seed": 3})
    assert code == EXIT_OK
    rows = _read(out / "w2.csv")
    assert rows[0] == ["N", "seed", "w2"]
    assert float(rows[-1][2]) == 0.0


def test_laplace_rows_lie_in_the_bracket(tmp_path):
    code, out = _run("laplace", tmp_path)
    assert code == EXIT_OK
    rows = _read(out / "laplace.csv")[1:]
    for r in rows:
        lo, val, hi = float(r[2]), float(r[3]), float(r[4])
        assert lo <= val <= hi and r[6] == "true"
    assert _summary(out)["results"]["all_within"] is True


def test_pde_compare_medians_decrease(tmp_path):
    code, out = _run("pde-compare", tmp_path, experiment={"n_list": [32, 512], "seeds": [0, 1, 2]})
    assert code == EXIT_OK
    med = _summary(out)["results"]["medians"]
    assert med["512"] < med["32"]
    dens = _read(out / "density.csv")
    assert abs(sum(float(r[1]) for r in dens[1:]) - 1.0) < 1e-9


def test_png_and_dat_outputs(tmp_path):
    code, out = _run("increment-probe", tmp_path, output={"formats": ["csv", "dat", "png"]})
    assert code == EXIT_OK
    assert (out / "increment-probe.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    dat = (out / "increments.dat").read_text().splitlines()
    assert dat[0].startswith("#")
    csv_rows = _read(out / "increments.csv")
    assert len(dat) == len(csv_rows)
    np.testing.assert_array_equal(np.array(dat[1].split(), float), np.array(csv_rows[1], float))


def test_threads_do_not_change_outputs(tmp_path):
    cfg = _config("pso", tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pso", "--config", str(cfg), "--out", str(a), "--threads", "1"]) == EXIT_OK
    assert main(["pso", "--config", str(cfg), "--out", str(b), "--threads", "4"]) == EXIT_OK
    for f in ("pso.csv", "summary.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cbomf", "assumptions", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "assumptions.csv" in r.stdout
