import json

import numpy as np
import pandas as pd
import pytest

from proxidist.cli import RHC_TAUS, RunConfig, main
from proxidist.reporting import read_table
from proxidist.simulators.dgp import Component1Config, generate
from proxidist.simulators.synthetic_rhc import synthetic_rhc_frame


@pytest.fixture(scope="module")
def rhc_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("rhc") / "rhc.csv"
    synthetic_rhc_frame(n=1200, seed=3).to_csv(path, index=False)
    return path


def outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_missing_file_exit_code(tmp_path, capsys):
    rc = main(["estimate", "--data", str(tmp_path / "nope.csv"), "--y", "y", "--a", "a",
               "--z", "z", "--w", "w", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "error [ingestion]" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    assert main(["simulate", "--component", "1", "--alpha", "2", "--out", str(tmp_path)]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["estimate", "--config", str(bad)]) == 4
    bad.write_text("{")
    assert main(["estimate", "--config", str(bad)]) == 4
    with pytest.raises(SystemExit):
        main(["simulate", "--component", "9"])


def test_rhc_estimate(rhc_csv, tmp_path):
    out = tmp_path / "rhc"
    assert main(["estimate", "--data", str(rhc_csv), "--recipe", "rhc", "--out", str(out),
                 "--multipliers", "200"]) == 0
    for name in ("cdf.csv", "bands.csv", "qte.csv", "cvar.csv", "quantile_bands.csv",
                 "diagnostics.json", "manifest.json"):
        assert (out / name).exists()
    qte = read_table(out / "qte.csv")
    assert len(qte) == 17
    np.testing.assert_allclose(qte["tau"], RHC_TAUS)
    assert {"Naive", "POR", "PIPW", "PDR"} <= set(qte.columns)
    assert (out / "qte.csv").read_text().startswith("# config_hash=")
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["basis_dimension"] == {"w": 21, "z": 21}
    assert len(diag["screened_covariates"]) == 5
    bands = read_table(out / "bands.csv")
    assert list(bands.columns) == ["arm", "y", "F_hat", "F_proj", "L", "U"]
    assert np.all(bands["L"] <= bands["U"])


def test_generic_estimate_component1(tmp_path):
    data, oracle = generate(Component1Config(n=3000), np.random.default_rng(8))
    frame = pd.DataFrame({"y": data.y, "a": data.a, "z": data.z[:, 0], "w": data.w[:, 0],
                          "x1": data.x[:, 0], "x2": data.x[:, 1]})
    path = tmp_path / "c1.csv"
    frame.to_csv(path, index=False)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"basis": {"kind": "polynomial", "degree": 3}, "taus": [0.5]}))
    out = tmp_path / "out"
    assert main(["estimate", "--config", str(cfg), "--data", str(path), "--y", "y", "--a", "a",
                 "--z", "z", "--w", "w", "--x", "x1,x2", "--out", str(out),
                 "--multipliers", "200"]) == 0
    from proxidist.simulators.dgp import population_quantile
    c = Component1Config()
    truth = population_quantile(c, 1, [0.5])[0] - population_quantile(c, 0, [0.5])[0]
    qte = read_table(out / "qte.csv").iloc[0]
    assert abs(qte["PDR"] - truth) < abs(qte["Naive"] - truth)


def test_simulate_smoke_and_determinism(tmp_path):
    args = ["simulate", "--component", "1", "--reps", "2", "--n", "500", "--multipliers", "100",
            "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = outputs(tmp_path / "a"), outputs(tmp_path / "b")
    for name in a:
        if name != "manifest.json":
            assert a[name] == b[name], name
    summary = read_table(tmp_path / "a" / "summary.csv")
    assert int(summary["reps"].iloc[0]) == 2
    assert len(read_table(tmp_path / "a" / "replications.csv")) == 2


def test_manifest_round_trip(tmp_path):
    first = tmp_path / "first"
    assert main(["gaussian-bench", "--reps", "50", "--n", "500,2000", "--out", str(first)]) == 0
    man = json.loads((first / "manifest.json").read_text())
    assert RunConfig.from_dict(man).to_dict() == man["config"]
    again = tmp_path / "again"
    assert main(["simulate", "--config", str(first / "manifest.json"), "--out", str(again)]) == 0
    a, b = outputs(first), outputs(again)
    for name in ("gaussian_bench.csv", "picard.csv", "diagnostics.json"):
        assert a[name] == b[name]
    table = read_table(first / "gaussian_bench.csv")
    assert len(table) == 6 and set(table["regime"]) == {"regular", "boundary", "nonregular"}


def test_diagnose_sweep(tmp_path):
    out = tmp_path / "diag"
    assert main(["diagnose", "--rhos", "0.9,0.3", "--n", "2000", "--degrees", "1,3",
                 "--out", str(out)]) == 0
    summary = read_table(out / "spectral_summary.csv")
    assert len(summary) == 2 * 2 * 2
    k = summary.groupby("rho")["kappa_min"].min()
    assert k[0.9] > k[0.3]
    assert set(summary["admissible"]) <= {True, False}
    n = 2000
    for _, row in summary.iterrows():
        d = max(row["d_w"], row["d_z"])
        assert row["admissible"] == (d ** 2 * np.sqrt(np.log(n)) < np.sqrt(n))
