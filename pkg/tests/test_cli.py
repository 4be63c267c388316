import csv
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bctm.cli import main, read_table, parse_dataset
from bctm.model import CovariateProfile, KnotGrid, BctmParameters, cure_rate
from bctm.simulation import SimScenario, generate_dataset

COLUMNS = {"left": "Timept1", "right": "Timept2", "event": "Relapse", "z": ["x1", "x2"], "x": ["x1", "x2"]}


def write_csv(path, data, inf_token="", delim=","):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow(["Timept1", "Timept2", "Relapse", "x1", "x2"])
        for i in range(len(data)):
            r = data.right[i]
            w.writerow([repr(float(data.left[i])), inf_token if math.isinf(r) else repr(float(r)), int(data.delta[i]),
                        repr(float(data.X[i, 0])), repr(float(data.X[i, 1]))])


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data = generate_dataset(SimScenario(alpha_true=1.0, n=200), 0)
    write_csv(d / "d.csv", data)
    cfg = {"columns": COLUMNS, "B": 1, "optimizer": "quasi-newton-with-bounds", "seed": 3,
           "beta_center": [0.6, -1.5, 0.1], "gamma_center": [-1.2, 0.1]}
    write_json(d / "cfg.json", cfg)
    assert main(["fit", str(d / "d.csv"), str(d / "cfg.json"), "--out", str(d / "fit.json")]) == 0
    return d, data, cfg


def load(path):
    return json.loads(path.read_text())


# -- ingestion ----------------------------------------------------------------------------


def test_infinite_tokens_and_tab(tmp_path):
    data = generate_dataset(SimScenario(n=30), 0)
    for tok, delim in (("", ","), ("NA", ","), ("Inf", "\t"), ("inf", ",")):
        path = tmp_path / "x.txt"
        write_csv(path, data, tok, delim)
        parsed = parse_dataset(read_table(str(path)), COLUMNS)
        assert np.array_equal(parsed.data.right, data.right)
        assert np.array_equal(parsed.data.left, data.left)


def test_bad_rows_reported_with_lines(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("Timept1,Timept2,Relapse,x1,x2\n0,1,1,0,1\n2,1,1,0,1\n0,,1,0,1\n0,3,1,0,abc\n1,2,1,0,2\n")
    cfg = write_json(tmp_path / "c.json", {"columns": COLUMNS, "B": 1})
    assert main(["fit", str(p), cfg]) == 2
    err = capsys.readouterr().err
    for line in ("line 3", "line 4", "line 5"):
        assert line in err
    assert "line 2" not in err and "line 6" not in err


def test_skip_mode_conserves_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("Timept1,Timept2,Relapse,x1,x2\n0,1,1,0,1\n2,1,1,0,1\n3,NA,0,1,2\n1,2,1,0,2\n")
    parsed = parse_dataset(read_table(str(p)), COLUMNS, on_bad_rows="skip")
    assert len(parsed.data) == len(parsed.table.rows) - len(parsed.rejects) == 3
    assert parsed.rejects[0][0] == 3


def test_malformed_field_count(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("Timept1,Timept2,Relapse,x1,x2\n0,1,1,0\n")
    assert main(["npmle", str(p), "--left", "Timept1", "--right", "Timept2", "--event", "Relapse"]) == 2
    assert "line 2" in capsys.readouterr().err


def test_exit_codes(tmp_path, files):
    d, _, cfg = files
    assert main(["fit", str(tmp_path / "missing.csv"), str(d / "cfg.json")]) == 2
    assert main(["fit", str(d / "d.csv"), write_json(tmp_path / "k.json", {**cfg, "cutpoints": [0, 1]})]) == 2
    assert main(["fit", str(d / "d.csv"), str(d / "cfg.json"), "--sweep-B", "3..1"]) == 2
    assert main(["nonsense"]) == 2
    # psi all zero on the first piece makes early intervals impossible
    bad = {**cfg, "init_mode": "explicit", "theta0": [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]}
    assert main(["fit", str(d / "d.csv"), write_json(tmp_path / "b.json", bad), "--out", str(tmp_path / "o.json")]) == 3


# -- fit -----------------------------------------------------------------------------------------


def test_fit_report_contents(files):
    d, data, _ = files
    rep = load(d / "fit.json")
    fit = rep["fit"]
    assert fit["names"] == ["alpha", "psi_0", "psi_1", "beta_0", "beta_1", "beta_2", "gamma_1", "gamma_2"]
    assert set(fit) >= {"theta_hat", "se", "vcov", "loglik", "aic", "n_params", "loglik_trace", "knots", "init"}
    assert fit["n_params"] == 8
    assert_allclose(fit["aic"], 16 - 2 * fit["loglik"])
    assert rep["data"]["n"] == 200 and rep["data"]["n_file_rows"] == 200
    assert (d / "fit.json.timing.json").exists()


def test_round_trip_bit_exact(files):
    d, _, _ = files
    fit = load(d / "fit.json")["fit"]
    theta = [fit["theta_hat"][n] for n in fit["names"]]
    text = (d / "fit.json").read_text()
    for v in theta + fit["knots"]:
        assert repr(float(v)) in text
    assert json.loads(json.dumps(theta)) == theta


def test_explicit_theta0_fixed_point(files, tmp_path):
    d, _, cfg = files
    # tight tol, as in the library fixed-point test: at 1e-3 the restart takes 3 iterations here
    tight = {**cfg, "tol": 1e-6}
    first = tmp_path / "first.json"
    assert main(["fit", str(d / "d.csv"), write_json(tmp_path / "c1.json", tight), "--out", str(first)]) == 0
    fit = load(first)["fit"]
    cfg2 = {**tight, "init_mode": "explicit", "theta0": fit["theta_hat"], "cutpoints": fit["knots"], "knot_mode": "explicit"}
    del cfg2["B"]
    out = tmp_path / "refit.json"
    assert main(["fit", str(d / "d.csv"), write_json(tmp_path / "c2.json", cfg2), "--out", str(out)]) == 0
    refit = load(out)["fit"]
    assert refit["n_em_iters"] <= 2
    assert abs(refit["loglik"] - fit["loglik"]) < 1e-6


def test_fit_deterministic(files, tmp_path):
    d, _, _ = files
    out = tmp_path / "again.json"
    assert main(["fit", str(d / "d.csv"), str(d / "cfg.json"), "--out", str(out)]) == 0
    assert out.read_bytes() == (d / "fit.json").read_bytes()


def test_sweep_and_profile(files, tmp_path):
    d, _, _ = files
    out = tmp_path / "sweep.json"
    assert main(["fit", str(d / "d.csv"), str(d / "cfg.json"), "--sweep-B", "1..2", "--out", str(out)]) == 0
    rows = load(out)["sweep"]
    assert [r["B"] for r in rows] == [1, 2] and [r["n_params"] for r in rows] == [8, 9]
    out = tmp_path / "prof.json"
    assert main(["fit", str(d / "d.csv"), str(d / "cfg.json"), "--profile-alpha-grid", "0,0.5,1", "--out", str(out)]) == 0
    prof = load(out)["fit"]
    assert [p["alpha"] for p in prof["profile"]] == [0.0, 0.5, 1.0]
    assert prof["fixed_alpha"] in (0.0, 0.5, 1.0)


def test_npmle_init_mode(files, tmp_path):
    d, _, cfg = files
    c = {**cfg, "init_mode": "npmle-pipeline", "knot_mode": "inflection", "B": 2, "group": "x1"}
    out = tmp_path / "init.json"
    assert main(["init", str(d / "d.csv"), write_json(tmp_path / "i.json", c), "--out", str(out)]) == 0
    rep = load(out)
    assert len(rep["knots"]) == 3 and rep["init"]["alpha"] == 0.5
    assert rep["setup"]["init_mode"] == "npmle-pipeline"


# -- simulate ----------------------------------------------------------------------------------------


def test_simulate_single_rep(tmp_path):
    scen = write_json(tmp_path / "s.json", {"alpha_true": 0.0, "n": 200, "reps": 1, "optimizer": "quasi-newton-with-bounds"})
    out = tmp_path / "sim.json"
    assert main(["simulate", scen, "--out", str(out)]) == 0
    rep = load(out)["report"]
    assert rep["n_reps"] == 1 and len(rep["rows"]) == 6 + 2
    from bctm.em import fit_em
    from bctm.simulation import _simulation_init, select_cutpoints_quantile
    from conftest import QN

    sc = SimScenario(alpha_true=0.0, n=200, reps=1)
    data = generate_dataset(sc, 0)
    fit = fit_em(data, select_cutpoints_quantile(data, 1), _simulation_init(sc, 0), QN)
    for j, row in enumerate(rep["rows"]):
        assert row["SE"] == fit.se[j]
        if row["BIAS"] is not None:
            assert_allclose(row["RMSE"], abs(row["BIAS"]), rtol=1e-12)
    out2 = tmp_path / "sim2.json"
    assert main(["simulate", scen, "--out", str(out2)]) == 0
    assert out.read_bytes() == out2.read_bytes()


def test_simulate_rejects_unknown_keys(tmp_path):
    assert main(["simulate", write_json(tmp_path / "s.json", {"alpha": 0.3})]) == 2


# -- summary -------------------------------------------------------------------------------------------


def test_summary_groups(files, tmp_path):
    d, data, _ = files
    out = tmp_path / "sum.json"
    assert main(["summary", str(d / "d.csv"), "--group", "x1", "--left", "Timept1", "--right", "Timept2",
                 "--event", "Relapse", "--out", str(out)]) == 0
    cells = load(out)["cells"]
    arm1 = data.X[:, 0] == 1
    assert_allclose(cells["x1=1.0"]["Total"]["event_pct"], 100 * np.mean(data.delta[arm1] == 1))
    assert_allclose(cells["Total"]["Total"]["event_pct"], 100 * np.mean(data.delta == 1))
    ev = data.delta == 1
    assert_allclose(cells["Total"]["Total"]["median_event_time"], np.median((data.left[ev] + data.right[ev]) / 2))
    assert_allclose(cells["Total"]["Total"]["covariates"]["x2"]["sd"], np.std(data.X[:, 1], ddof=1))


def test_summary_single_row_and_constant_group(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("Timept1,Timept2,Relapse,g,x2\n1,2,1,0,3.5\n")
    out = tmp_path / "o.json"
    args = ["--group", "g", "--left", "Timept1", "--right", "Timept2", "--event", "Relapse", "--out", str(out)]
    assert main(["summary", str(p), *args]) == 0
    cell = load(out)["cells"]["g=0"]["Total"]
    assert cell["covariates"]["x2"] == {"mean": 3.5, "sd": None}
    p.write_text("Timept1,Timept2,Relapse,g,x2\n1,2,1,0,3.5\n0,NA,0,0,1.0\n2,4,1,0,2.0\n")
    assert main(["summary", str(p), *args]) == 0
    cells = load(out)["cells"]
    assert cells["g=0"] == cells["Total"]


# -- curves -----------------------------------------------------------------------------------------------


def test_curves(files, tmp_path):
    d, _, _ = files
    fit = load(d / "fit.json")["fit"]
    profs = write_json(tmp_path / "p.json", {"profiles": [
        {"name": "arm 1", "covariates": {"x1": 1, "x2": 19.0}},
        {"name": "arm 0", "z": [1, 0, 1.0], "x": [0, 1.0]},
    ]})
    out = tmp_path / "curves"
    assert main(["curves", str(d / "fit.json"), profs, "--out", str(out)]) == 0
    summary = load(out / "curves.json")
    names = fit["names"]
    params = BctmParameters.from_vector(np.array([fit["theta_hat"][n] for n in names]), 2, 3)
    for prof, z in zip(summary["profiles"], ([1, 1, 19.0], [1, 0, 1.0])):
        rows = list(csv.reader(open(out / prof["file"])))
        vals = np.array([[float(a), float(b)] for a, b in rows[1:]])
        assert vals[0, 1] == 1.0
        assert np.all(np.diff(vals[:, 1]) <= 1e-15)
        assert_allclose(prof["cure_rate"], cure_rate(params, np.array(z)))
    assert (out / "curves.svg").read_text().startswith("<?xml")
    svg = (out / "curves.svg").read_bytes()
    assert main(["curves", str(d / "fit.json"), profs, "--out", str(out)]) == 0
    assert (out / "curves.svg").read_bytes() == svg


def test_curve_tail_near_cure_rate(tmp_path):
    # hand-built report with a saturated cumulative hazard at tau_B
    names = ["alpha", "psi_0", "psi_1", "beta_0"]
    rep = {"fit": {"names": names, "theta_hat": dict(zip(names, [0.5, 1.0, 1.0, 0.2])), "knots": [0.0, 8.0]},
           "data": {"z_columns": [], "x_columns": []}}
    r = write_json(tmp_path / "r.json", rep)
    profs = write_json(tmp_path / "p.json", {"profiles": [{"name": "base", "z": [1.0], "x": []}]})
    assert main(["curves", r, profs, "--out", str(tmp_path / "c")]) == 0
    prof = load(tmp_path / "c" / "curves.json")["profiles"][0]
    assert abs(prof["S_p_at_tau_B"] - prof["cure_rate"]) < 0.02


# -- npmle ------------------------------------------------------------------------------------------------


def npmle_args(path, out):
    return ["npmle", str(path), "--left", "L", "--right", "R", "--event", "E", "--out", str(out)]


def test_npmle_toy(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text("L,R,E\n0,1,1\n2,3,1\n")
    out = tmp_path / "n.json"
    assert main(npmle_args(p, out)) == 0
    sup = load(out)["npmle"]["support"]
    assert_allclose([s["mass"] for s in sup], [0.5, 0.5], atol=1e-9)


def test_npmle_right_censored_only(tmp_path):
    p = tmp_path / "rc.csv"
    p.write_text("L,R,E\n1,,0\n2,NA,0\n3.5,Inf,0\n")
    out = tmp_path / "n.json"
    assert main(npmle_args(p, out)) == 0
    rep = load(out)["npmle"]
    assert all(pt["S"] == 1.0 for pt in rep["survival"])


def test_npmle_mass_sum(files, tmp_path):
    d, _, _ = files
    out = tmp_path / "n.json"
    assert main(["npmle", str(d / "d.csv"), "--left", "Timept1", "--right", "Timept2", "--event", "Relapse", "--out", str(out)]) == 0
    rep = load(out)["npmle"]
    total = sum(s["mass"] for s in rep["support"]) + rep["mass_at_infinity"]
    assert total <= 1 + 1e-9
