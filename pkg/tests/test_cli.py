import hashlib
import json

import numpy as np
import pytest

from surfparc.cli import main
from surfparc.formats import read_labels, read_mesh, write_labels, write_mesh
from surfparc.mesh import TriangleMesh, label_components


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def subject(tmp_path_factory):
    d = tmp_path_factory.mktemp("subj")
    assert run("synth", "--out-dir", d, "--subdivisions", 3, "--noise", 0.2, "--seed", 2) == 0
    return d


def digest(paths):
    return [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]


def test_synth_layout(subject):
    names = {p.name for p in subject.iterdir()}
    assert {"inner.ply", "central.ply", "outer.ply", "volume.nii", "labels.csv", "truth.labels"} <= names


def test_run_end_to_end(subject, tmp_path):
    assert run("run", "--subject", subject, "--out-dir", tmp_path) == 0
    for n in ("inner", "central", "outer"):
        mesh = read_mesh(subject / f"{n}.ply")
        labels = read_labels(tmp_path / f"{n}.labels", mesh.n_vertices)
        assert labels.min() >= 1
    rep = json.loads((tmp_path / "correction.json").read_text())
    assert rep["converged"]
    central = read_labels(tmp_path / "central.labels")
    comps = label_components(read_mesh(subject / "central.ply"), central)
    assert all(len(c) == 1 for c in comps.values())


def test_run_is_deterministic(subject, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / str(k)
        assert run("run", "--subject", subject, "--out-dir", out) == 0
        outs.append(digest(sorted(p for p in out.iterdir() if p.name != "run.json")))
        meta = json.loads((out / "run.json").read_text())
        assert meta["config"].pop("output_dir") == str(out)
        outs.append(meta)
    assert outs[0] == outs[2] and outs[1] == outs[3]


def test_stagewise_equals_run(subject, tmp_path):
    assert run("run", "--subject", subject, "--out-dir", tmp_path / "all") == 0
    assert run("parcellate", "--volume", subject / "volume.nii", "--central", subject / "central.ply",
               "--table", subject / "labels.csv", "--out", tmp_path / "raw.labels") == 0
    assert run("fix-topology", "--mesh", subject / "central.ply", "--labels", tmp_path / "raw.labels",
               "--out", tmp_path / "central.labels", "--report", tmp_path / "rep.json") == 0
    assert run("propagate", "--central", subject / "central.ply", "--labels", tmp_path / "central.labels",
               "--target", subject / "inner.ply", "--direction", "inner", "--out", tmp_path / "inner.labels") == 0
    for n in ("central", "inner"):
        assert (tmp_path / f"{n}.labels").read_bytes() == (tmp_path / "all" / f"{n}.labels").read_bytes()


def test_fix_topology_fixed_point(subject, tmp_path):
    assert run("fix-topology", "--mesh", subject / "central.ply", "--labels", subject / "truth.labels",
               "--out", tmp_path / "o.labels", "--report", tmp_path / "r.json") == 0
    assert (tmp_path / "o.labels").read_bytes() == (subject / "truth.labels").read_bytes()
    assert json.loads((tmp_path / "r.json").read_text())["total_reassigned"] == 0


def test_parcellate_orphans_exit_1(subject, tmp_path, capsys):
    m = read_mesh(subject / "central.ply")
    v = m.vertices.copy()
    v[5] += [0, 0, 500.0]
    write_mesh(TriangleMesh(v, m.faces), tmp_path / "bad.ply")
    code = run("parcellate", "--volume", subject / "volume.nii", "--central", tmp_path / "bad.ply",
               "--table", subject / "labels.csv", "--out", tmp_path / "x.labels")
    assert code == 1
    err = capsys.readouterr().err
    assert "vertices: 5" in err
    assert not (tmp_path / "x.labels").exists()


def test_json_errors(subject, tmp_path, capsys):
    code = run("--json-errors", "parcellate", "--volume", tmp_path / "missing.nii",
               "--central", subject / "central.ply", "--table", subject / "labels.csv", "--out", tmp_path / "x")
    assert code == 2
    payload = json.loads(capsys.readouterr().err)
    assert payload["exit_code"] == 2 and payload["error"] == "FormatError"


def test_format_error_exit_2(subject, tmp_path):
    (tmp_path / "bad.off").write_text("OFX\n")
    assert run("propagate", "--central", tmp_path / "bad.off", "--labels", subject / "truth.labels",
               "--target", subject / "inner.ply", "--direction", "inner", "--out", tmp_path / "o") == 2


def test_usage_error_exit_1(capsys):
    assert run("propagate", "--direction", "sideways") == 1


def test_convergence_exit_3(tmp_path, capsys):
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
    write_mesh(TriangleMesh(np.vstack([tri, tri + 5]), [[0, 1, 2], [3, 4, 5]]), tmp_path / "m.off")
    write_labels([1] * 6, tmp_path / "l.labels")
    code = run("--json-errors", "fix-topology", "--mesh", tmp_path / "m.off", "--labels", tmp_path / "l.labels",
               "--out", tmp_path / "o.labels", "--report", tmp_path / "r.json")
    assert code == 3
    assert json.loads((tmp_path / "r.json").read_text())["converged"] is False
    assert "report" in json.loads(capsys.readouterr().err)["details"]


def test_config_file(subject, tmp_path):
    (tmp_path / "c.json").write_text('{"search_cap_mm": 0.01}')
    code = run("--config", tmp_path / "c.json", "parcellate", "--volume", subject / "volume.nii",
               "--central", subject / "central.ply", "--table", subject / "labels.csv", "--out", tmp_path / "x")
    assert code == 1


def test_evaluate_pair_with_figures(tmp_path):
    pair = tmp_path / "pair"
    assert run("synth", "--out-dir", pair, "--pair", "--subdivisions", 2, "--volume-format", "native") == 0
    for side in ("scan", "rescan"):
        assert run("run", "--subject", pair / side) == 0
    out = tmp_path / "report"
    assert run("evaluate", "--scan", pair / "scan", "--rescan", pair / "rescan", "--out-dir", out, "--figures") == 0
    rows = (out / "dsc.csv").read_text().splitlines()
    assert rows[0] == "pair,surface,label,dsc,matched,count_scan,count_rescan"
    labels = [r.split(",")[2] for r in rows[1:] if r.split(",")[1] == "central"]
    assert labels == [str(k) for k in range(1, 9)] + ["overall"]
    summary = json.loads((out / "summary.json").read_text())
    assert list(summary) == ["n_pairs", "dsc", "pearson", "wilcoxon", "pairs"]
    for name in ("dsc_boxplot.png", "area_scatter.png", "thickness_scatter.png"):
        assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    first = digest(sorted(out.iterdir()))
    assert run("evaluate", "--scan", pair / "scan", "--rescan", pair / "rescan", "--out-dir", out, "--figures") == 0
    assert digest(sorted(out.iterdir())) == first


def test_evaluate_mismatched_counts(tmp_path):
    assert run("evaluate", "--scan", tmp_path, "--scan", tmp_path, "--rescan", tmp_path,
               "--out-dir", tmp_path / "o") == 1
