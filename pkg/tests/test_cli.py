import json
import os

import numpy as np
import pytest

from spinlab.cli import main, parse_potential, resolve_config
from spinlab.errors import ConfigError


def test_parse_potential_families():
    assert parse_potential("gaussian").kind == "gaussian"
    assert parse_potential("double-well").kind == "double-well"
    qc = parse_potential("x2/2+0.5cos")
    assert qc.kind == "quadratic-plus-cosine" and qc.params["eps"] == 0.5
    qp = parse_potential("x2/2+x4")
    assert qp.kind == "quadratic-plus-power" and qp.p == 4.0
    assert parse_potential("quad-power:a=2,b=0.5,p=4").params["a"] == 2.0
    with pytest.raises(ConfigError):
        parse_potential("sextic-frobnicator")


def test_resolve_config_seed_always_recorded(tmp_path):
    cfg = resolve_config(["renorm", "--potential", "gaussian",
                          "--out", str(tmp_path / "o")])
    assert isinstance(cfg["seed"], int)
    cfg2 = resolve_config(["renorm", "--potential", "gaussian", "--seed", "9",
                           "--out", str(tmp_path / "o2")])
    assert cfg2["seed"] == 9


def test_unknown_config_key_exits_2_and_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"potential": "gaussian", "iterattions": 6}))
    code = main(["renorm", "--config", str(bad), "--seed", "1",
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "iterattions" in capsys.readouterr().err


def test_renorm_subcommand_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    code = main(["renorm", "--potential", "double-well", "--iterations", "2",
                 "--grid-halfwidth", "5", "--grid-step", "0.05",
                 "--seed", "7", "--out", str(out)])
    assert code == 0
    names = sorted(os.listdir(out))
    assert "manifest.json" in names and "resolved_config.json" in names
    assert "renormalized_01.json" in names and "certification_02.json" in names
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 7
    assert "renormalized_02.json" in manifest["artifacts"]
    from spinlab.potential import TabulatedPotential
    tab = TabulatedPotential.from_json((out / "renormalized_01.json").read_text())
    assert tab.iteration_count == 1


def test_rerun_with_resolved_config_is_bit_for_bit(tmp_path):
    out1 = tmp_path / "a"
    assert main(["renorm", "--potential", "gaussian", "--iterations", "1",
                 "--grid-halfwidth", "4", "--grid-step", "0.1",
                 "--seed", "3", "--out", str(out1)]) == 0
    cfg = json.loads((out1 / "resolved_config.json").read_text())
    cfg["out"] = str(tmp_path / "b")
    rerun = tmp_path / "rerun.json"
    rerun.write_text(json.dumps(cfg))
    assert main(["renorm", "--config", str(rerun)]) == 0
    for name in os.listdir(out1):
        if name in ("manifest.json", "resolved_config.json"):
            continue
        assert (out1 / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cramer_subcommand_deficit_csv(tmp_path):
    out = tmp_path / "cr"
    code = main(["cramer", "--potential", "gaussian", "--K", "2",
                 "--m-min", "-1", "--m-max", "1", "--m-points", "9",
                 "--seed", "5", "--out", str(out)])
    assert code == 0
    lines = (out / "deficit_K002.csv").read_text().strip().splitlines()
    assert lines[0] == "m,phi,phi_dd,psi_K_dd,deficit"
    summary = json.loads((out / "deficit_summary.json").read_text())
    assert summary[0]["max_deficit"] <= 1e-5


def test_transport_subcommand_roundtrip(tmp_path):
    from spinlab.ensemble import SampleBatch, save_batch
    rng = np.random.default_rng(0)
    a = SampleBatch(data=rng.normal(size=(64, 2)), seed=1, ess=64, thinning=1)
    b = SampleBatch(data=rng.normal(0.5, 1, size=(64, 2)), seed=2, ess=64, thinning=1)
    pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
    save_batch(a, pa)
    save_batch(b, pb)
    out = tmp_path / "tr"
    code = main(["transport", "--batch-a", str(pa), "--batch-b", str(pb),
                 "--p", "2", "--seed", "1", "--out", str(out)])
    assert code == 0
    res = json.loads((out / "wasserstein.json").read_text())
    assert res["method"] == "matching" and res["value"] > 0


def test_certify_subcommand(tmp_path):
    from spinlab.potential import GridSpec, TabulatedPotential
    g = GridSpec(-3.0, 3.0, 201)
    tab = TabulatedPotential(grid=g, values=0.5 * g.nodes() ** 2, p=2.0)
    src = tmp_path / "tab.json"
    src.write_text(tab.to_json())
    out = tmp_path / "ct"
    code = main(["certify", "--input", str(src), "--p", "2",
                 "--seed", "1", "--out", str(out)])
    assert code == 0
    rep = json.loads((out / "certification.json").read_text())
    assert rep["rho_p"] >= 0.99


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("SPINLAB_OUT", str(tmp_path / "root"))
    cfg = resolve_config(["renorm", "--potential", "gaussian", "--seed", "2"])
    assert cfg["out"].startswith(str(tmp_path / "root"))
