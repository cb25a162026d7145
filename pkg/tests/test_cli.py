import json
import subprocess
import sys

import numpy as np
import pytest

from poisson_rigidity.cli import main
from poisson_rigidity.errors import ConfigError
from poisson_rigidity.experiment import ExperimentConfig, generate_perturbation
from poisson_rigidity.jets import jacobi_defect, schouten_bracket
from poisson_rigidity.lie import linear_poisson, so3
from poisson_rigidity.norms import REPORT_COLUMNS
from poisson_rigidity.stability import FoliationData, sphere_example, torus_example

SMALL = ["--trunc-order", "9"]


def stderr_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_run_writes_artifacts_and_is_deterministic(tmp_path, capsys):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", *SMALL, "--seed", "3", "--out", str(out)]) == 0
        outputs.append({f: (out / f).read_text() for f in ("history.csv", "result.json", "summary.json")})
    assert outputs[0] == outputs[1]
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("converged=true steps=")
    summary = json.loads(outputs[0]["summary.json"])
    assert summary["checks"]["poisson_map"] and summary["checks"]["identity_to_first_order"]
    header = outputs[0]["history.csv"].splitlines()[0]
    assert header.startswith("k,")


def test_random_deformation_run(capsys):
    args = ["run", *SMALL, "--kind", "random_poisson_deformation", "--seed", "1"]
    assert main(args) == 0
    assert "converged=true" in capsys.readouterr().out


def test_abelian_algebra_is_refused(capsys):
    assert main(["run", "--algebra", "abelian3", *SMALL]) == 3
    err = stderr_error(capsys)
    assert err["error"] == "HarmonicObstruction" and "k=" in err["message"]


def test_large_perturbation_is_refused(capsys):
    assert main(["run", *SMALL, "--magnitude", "0.1"]) == 3
    assert stderr_error(capsys)["error"]


def test_unperturbed_input_needs_no_steps(tmp_path, capsys):
    path = tmp_path / "pi.json"
    path.write_text(json.dumps(linear_poisson(so3(), 9).to_json()))
    assert main(["run", *SMALL, "--perturbation", str(path)]) == 0
    assert "steps=0" in capsys.readouterr().out


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--radii", "0.5,0.9"],
        ["run", "--min-degree", "1"],
        ["run", "--algebra", "g2"],
        ["run", "--perturbation", "/nonexistent/p.json"],
        ["run", "--rational", "--kind", "random_poisson_deformation"],
    ],
)
def test_bad_configuration_exits_with_two(args, capsys):
    assert main(args) == 2
    assert "error" in stderr_error(capsys)


def test_check_foliation(tmp_path, capsys):
    good, bad = tmp_path / "s2.json", tmp_path / "t2.json"
    good.write_text(json.dumps(sphere_example().to_json()))
    bad.write_text(json.dumps(torus_example().to_json()))
    assert main(["check-foliation", str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["c3"] is True
    assert main(["check-foliation", str(bad)]) == 1
    assert json.loads(capsys.readouterr().out)["kernel_dim"] == 2


def test_check_foliation_malformed(tmp_path, capsys):
    path = tmp_path / "bad.json"
    data = sphere_example().to_json()
    data["var"] = [[1.0, 2.0]]
    path.write_text(json.dumps(data))
    assert main(["check-foliation", str(path)]) == 2
    assert stderr_error(capsys)["error"] == "StructuralError"


def test_tame_report_csv(tmp_path, capsys):
    out = tmp_path / "flow.csv"
    assert main(["tame-report", "--kind", "flow", "--samples", "20", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == list(REPORT_COLUMNS)
    assert len(lines) > 1
    assert "kind=flow" in capsys.readouterr().err


def test_homotopy_report(capsys):
    assert main(["homotopy-report", "--algebra", "so3", "--k-max", "4"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert {(r["q"], r["k"]) for r in rows} == {(q, k) for q in (1, 2) for k in range(5)}
    assert all(r["harmonic_dim"] == 0 for r in rows)


def test_module_entry_point(tmp_path):
    path = tmp_path / "s2.json"
    path.write_text(json.dumps(sphere_example().to_json()))
    proc = subprocess.run([sys.executable, "-m", "poisson_rigidity", "check-foliation", str(path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and '"c1": true' in proc.stdout


def test_exact_kind_is_poisson():
    cfg = ExperimentConfig(trunc_order=9, seed=4)
    P = generate_perturbation(cfg)
    assert jacobi_defect(P) <= 1e-12
    assert (P - linear_poisson(so3(), 9)).lowest_degree() >= 2


def test_rational_exact_kind_is_exactly_poisson():
    P = generate_perturbation(ExperimentConfig(trunc_order=5, seed=2, rational=True))
    assert P.rational and schouten_bracket(P, P).is_zero()


def test_random_deformation_is_reproducible():
    cfg = ExperimentConfig(kind="random_poisson_deformation", trunc_order=9, seed=8)
    a, b = generate_perturbation(cfg), generate_perturbation(cfg)
    assert np.array_equal(a.coeffs, b.coeffs)
    assert jacobi_defect(a) <= 1e-12
    assert (a - linear_poisson(so3(), 9)).lowest_degree() >= 2


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(magnitude=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="bogus")
    with pytest.raises(ConfigError):
        ExperimentConfig(trunc_order=1)


def test_foliation_json_with_empty_blocks_round_trips():
    data = sphere_example()
    back = FoliationData.from_json(json.loads(json.dumps(data.to_json())))
    assert back.wedge.shape == (0, 0) and back.var.shape == (1, 1)
