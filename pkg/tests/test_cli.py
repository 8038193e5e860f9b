import json

import numpy as np
from preforge.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_analyze_driven_qubit(capsys, tmp_path):
    out_path = tmp_path / "bundle.json"
    code, out, _ = run(
        capsys,
        "analyze",
        "resonance_fluorescence",
        "--param",
        "gamma=1",
        "--param",
        "Omega=0.18",
        "-o",
        str(out_path),
    )
    assert code == 0
    assert "-0.5" in out and "0.18" in out
    bundle = json.loads(out_path.read_text())
    model = bundle["results"]["model"]
    assert np.allclose(model["l0"], [[-0.5, 0, 0], [0, -0.5, -0.18], [0, 0.18, -1.0]])
    assert np.allclose(model["b"], [0, 0, -1.0])


def test_analyze_thermal_qubit_eigenvalues(capsys):
    code, out, _ = run(
        capsys,
        "analyze",
        "absorption_emission",
        "--param",
        "gamma_minus=1",
        "--param",
        "gamma_plus=0.3",
    )
    assert code == 0
    assert "-0.65" in out  # half rate, twice
    assert "-1.3" in out
    assert "geometric 2" in out  # equatorial degeneracy


def test_missing_parameter_is_usage_error(capsys):
    code, _, err = run(capsys, "analyze", "resonance_fluorescence", "--param", "gamma=1")
    assert code == 2
    assert "Omega" in err


def test_unknown_spec_is_usage_error(capsys):
    code, _, err = run(capsys, "analyze", "no_such_model")
    assert code == 2
    assert "catalog" in err


def test_search_finds_k2_census_and_bundle_roundtrip(capsys, tmp_path):
    args = [
        "search",
        "resonance_fluorescence",
        "--param",
        "gamma=1",
        "--param",
        "Omega=0.18",
        "--k",
        "2",
        "--seeds",
        "96",
        "--rng",
        "0",
    ]
    out1 = tmp_path / "a.json"
    out2 = tmp_path / "b.json"
    code, _, _ = run(capsys, *args, "-o", str(out1))
    assert code == 0
    code, _, _ = run(capsys, *args, "-o", str(out2))
    assert code == 0
    assert out1.read_text() == out2.read_text()  # bitwise reproducible
    bundle = json.loads(out1.read_text())
    ensembles = bundle["results"]["ensembles"]
    analytic = [e for e in ensembles if e["source"]["route"] == "analytic-k2"]
    assert len(analytic) == 3
    # numeric routes found nothing new beyond the analytic census
    assert len(ensembles) == 3


def test_search_warns_below_heuristic(capsys, tmp_path):
    code, _, err = run(
        capsys,
        "search",
        "absorption_emission",
        "--param",
        "gamma_minus=1",
        "--param",
        "gamma_plus=0.3",
        "--k",
        "2",
        "--seeds",
        "8",
        "-o",
        str(tmp_path / "x.json"),
    )
    assert code == 0
    assert "warning" not in err  # K=2 meets the bound for qubits


def test_verify_flags_perturbed_rates(capsys, tmp_path, rf_bm):
    from preforge.solver import analytic_k2

    ens = analytic_k2(rf_bm).ensembles[0]
    doc = {
        "dim": 2,
        "states": ens.states.tolist(),
        "kappa": (ens.kappa * 1.15).tolist(),
    }
    path = tmp_path / "ens.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(
        capsys,
        "verify",
        "resonance_fluorescence",
        "--param",
        "gamma=1",
        "--param",
        "Omega=0.18",
        "--ensemble",
        str(path),
    )
    assert code == 1
    assert "FAIL" in out and "residual" in out


def test_verify_passes_good_ensemble(capsys, tmp_path, rf_bm):
    from preforge.solver import analytic_k2

    ens = analytic_k2(rf_bm).ensembles[0]
    path = tmp_path / "ens.json"
    path.write_text(
        json.dumps({"dim": 2, "states": ens.states.tolist(), "kappa": ens.kappa.tolist()})
    )
    code, out, _ = run(
        capsys,
        "verify",
        "resonance_fluorescence",
        "--param",
        "gamma=1",
        "--param",
        "Omega=0.18",
        "--ensemble",
        str(path),
    )
    assert code == 0
    assert "PASS" in out


def test_scheme_reports_half_unit_oscillator(capsys, tmp_path, rf_bm):
    from preforge.solver import analytic_k2

    sols = analytic_k2(rf_bm)
    ens = next(
        e for e, t in zip(sols.ensembles, sols.family_tags) if abs(t["eigenvalue"] + 0.5) < 1e-9
    )
    path = tmp_path / "ens.json"
    path.write_text(
        json.dumps({"dim": 2, "states": ens.states.tolist(), "kappa": ens.kappa.tolist()})
    )
    bundle_path = tmp_path / "scheme.json"
    code, out, _ = run(
        capsys,
        "scheme",
        "resonance_fluorescence",
        "--param",
        "gamma=1",
        "--param",
        "Omega=0.18",
        "--ensemble",
        str(path),
        "-o",
        str(bundle_path),
    )
    assert code == 0
    betas = [
        complex(b[0], b[1])
        for entry in json.loads(bundle_path.read_text())["results"]["scheme"]["settings"]
        for b in entry["beta"]
    ]
    assert abs(betas[0] + betas[1]) < 1e-9
    assert all(abs(abs(b) - 0.5) < 1e-6 and abs(b.real) < 1e-7 for b in betas)


def test_plotdata_member_rows(capsys, tmp_path, rf_bm):
    # build a small search bundle, then slice figure data out of it
    args = [
        "search",
        "resonance_fluorescence",
        "--param",
        "gamma=1",
        "--param",
        "Omega=0.18",
        "--k",
        "2",
        "--seeds",
        "16",
    ]
    bundle_path = tmp_path / "bundle.json"
    code, _, _ = run(capsys, *args, "-o", str(bundle_path))
    assert code == 0
    csv_path = tmp_path / "fig.csv"
    code, _, _ = run(
        capsys, "plotdata", str(bundle_path), "--figure-id", "fig1a", "-o", str(csv_path)
    )
    assert code == 0
    lines = csv_path.read_text().strip().splitlines()
    records = [line.split(",")[0] for line in lines[1:]]
    assert records.count("member") == 2
    assert records.count("steady") == 1
    assert records.count("arrow") == 2


def test_search_thermal_k3_on_meridian_disc(capsys, tmp_path):
    out = tmp_path / "bundle.json"
    code, _, _ = run(
        capsys,
        "search",
        "absorption_emission",
        "--param",
        "gamma_minus=1",
        "--param",
        "gamma_plus=0.05",
        "--k",
        "3",
        "--seeds",
        "96",
        "--wigner-reduce",
        "none",
        "-o",
        str(out),
    )
    assert code == 0
    ensembles = json.loads(out.read_text())["results"]["ensembles"]
    assert len(ensembles) == 2  # distinct cycles, families counted once
    assert all(e["source"]["route"].startswith("subspace") for e in ensembles)


def test_plotdata_cycling_direction_column(capsys, tmp_path):
    states = [
        [0.9061487215985603, 0.0, -0.42307692307692305],
        [-0.45307436079928017, 0.7847476323362848, -0.42307692307692305],
        [-0.45307436079928017, -0.7847476323362848, -0.42307692307692305],
    ]
    kappa = [[0.0, 0.0, 0.25], [0.25, 0.0, 0.0], [0.0, 0.25, 0.0]]
    bundle = {
        "results": {
            "model": {"x_ss": [0.0, 0.0, -0.42307692307692305]},
            "ensembles": [
                {"states": states, "kappa": kappa, "occupations": [1 / 3] * 3}
            ],
        }
    }
    bundle_path = tmp_path / "bundle.json"
    bundle_path.write_text(json.dumps(bundle))
    csv_path = tmp_path / "fig3.csv"
    code, _, _ = run(
        capsys, "plotdata", str(bundle_path), "--figure-id", "fig3", "-o", str(csv_path)
    )
    assert code == 0
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0].endswith("cycle_direction")
    member_rows = [l for l in lines[1:] if l.startswith("member")]
    assert len(member_rows) == 3
    assert all(row.endswith("forward") for row in member_rows)


def test_simulate_command_writes_events(capsys, tmp_path, ae_bm):
    from preforge.solver import analytic_k2

    sols = analytic_k2(ae_bm)
    poles = next(
        e for e, t in zip(sols.ensembles, sols.family_tags) if t["family"] is None
    )
    ens_path = tmp_path / "ens.json"
    ens_path.write_text(
        json.dumps({"dim": 2, "states": poles.states.tolist(), "kappa": poles.kappa.tolist()})
    )
    events_path = tmp_path / "events.csv"
    code, out, _ = run(
        capsys,
        "simulate",
        "absorption_emission",
        "--param",
        "gamma_minus=1",
        "--param",
        "gamma_plus=0.3",
        "--ensemble",
        str(ens_path),
        "--jumps",
        "300",
        "--events",
        str(events_path),
    )
    assert code == 0
    assert "occupancy" in out and "drift" in out
    lines = events_path.read_text().strip().splitlines()
    assert lines[0] == "time,channel,from_label,to_label"
    assert len(lines) == 301


def test_plotdata_unknown_figure(capsys, tmp_path):
    bundle_path = tmp_path / "bundle.json"
    bundle_path.write_text(json.dumps({"results": {"ensembles": []}}))
    code, _, err = run(capsys, "plotdata", str(bundle_path), "--figure-id", "fig99")
    assert code == 2
    assert "unknown figure" in err


def test_plotdata_empty_solution_set(capsys, tmp_path):
    bundle_path = tmp_path / "bundle.json"
    bundle_path.write_text(json.dumps({"results": {"ensembles": [], "model": {}}}))
    csv_path = tmp_path / "fig.csv"
    code, _, _ = run(capsys, "plotdata", str(bundle_path), "--figure-id", "fig2", "-o", str(csv_path))
    assert code == 0
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 1  # header only


def test_scheme_synthesis_failure_is_numeric_error(capsys, tmp_path, rf_bm):
    from preforge.solver import analytic_k2

    ens = analytic_k2(rf_bm).ensembles[0]
    path = tmp_path / "ens.json"
    path.write_text(
        json.dumps(
            {"dim": 2, "states": ens.states.tolist(), "kappa": (ens.kappa * 1.5).tolist()}
        )
    )
    code, _, err = run(
        capsys,
        "scheme",
        "resonance_fluorescence",
        "--param",
        "gamma=1",
        "--param",
        "Omega=0.18",
        "--ensemble",
        str(path),
    )
    assert code == 3
    assert "numerical failure" in err


def test_catalog_command(capsys):
    code, out, _ = run(capsys, "catalog")
    assert code == 0
    assert "resonance_fluorescence" in out
    assert "absorption_emission" in out


def test_scan_small_grid(capsys, tmp_path):
    csv_path = tmp_path / "scan.csv"
    code, _, err = run(
        capsys,
        "scan",
        "absorption_emission",
        "--param",
        "gamma_minus=1",
        "--scan-param",
        "gamma_plus",
        "--values",
        "0.04:0.08:0.02",
        "--k",
        "3",
        "--subspace-span",
        "1,0,0;0,0,1",
        "--seeds",
        "128",
        "-o",
        str(csv_path),
    )
    assert code == 0
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "gamma_plus,n_ensembles"
    rows = dict(line.split(",") for line in lines[1:])
    assert rows["0.04"] == "2"
    assert rows["0.08"] == "0"
    assert "count changes" in err
