"""Acceptance suite: one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines inline, or
``python tests/test_acceptance.py`` for the plain listing.
"""
import contextlib
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from surfparc.cli import main as cli_main  # noqa: E402
from surfparc.errors import (FormatError, IndexRangeError, TruncatedFileError,  # noqa: E402
                             UnknownMagicError, ValidationError)
from surfparc.formats import (read_labels, read_mesh, read_native_volume, read_nifti,  # noqa: E402
                              write_labels, write_native_volume, write_nifti, write_off, write_ply)
from surfparc.mesh import TriangleMesh, label_components, vertex_normals  # noqa: E402
from surfparc.parcellate import vsbsp  # noqa: E402
from surfparc.phantom import (DEFAULT_BUMP_AMPLITUDE, PhantomSpec, make_icosphere,  # noqa: E402
                              make_phantom, sector_border_distance, sector_labels)
from surfparc.propagate import PropagationDirection, propagate_labels  # noqa: E402
from surfparc.repro import dsc, icp_rigid, pearson, wilcoxon_signed_rank  # noqa: E402
from surfparc.topology import fill_iterative, topological_correction  # noqa: E402
from surfparc.transform import RigidTransform, relative_error  # noqa: E402
from surfparc.volume import LabelVolume  # noqa: E402

from oracles import jacobi_fill, signed_rank_p_enumerated  # noqa: E402
from test_spatial import brute_halfspace  # noqa: E402


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line, flush=True)
    return ok


def criterion_1():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    failures = 0
    for _ in range(50):
        n_sectors = int(rng.integers(8, 17))
        m = make_icosphere(float(rng.uniform(10, 40)), int(rng.integers(3, 5)))
        labels = sector_labels(m, n_sectors)
        flip = rng.random(m.n_vertices) < 0.05
        labels[flip] = rng.integers(1, n_sectors + 1, int(flip.sum()))
        try:
            out, rep = topological_correction(m, labels)
        except Exception:
            failures += 1
            continue
        comps = label_components(m, out)
        if not rep.converged or any(len(c) != 1 for c in comps.values()):
            failures += 1
    dt = time.perf_counter() - t0
    return report(1, failures == 0 and dt < 60, f"50 phantoms, {failures} failures, {dt:.1f} s (limit 60 s)")


def criterion_2():
    spec = PhantomSpec()
    ph = make_phantom(spec)
    central = ph.surfaces.central
    labels = vsbsp(central, ph.volume, ph.table)
    diag = float(np.linalg.norm(spec.voxel_size))
    far = sector_border_distance(central.vertices, spec.n_sectors) > diag
    frac = float(np.mean(labels[far] == ph.truth_labels[far]))
    return report(2, frac >= 0.99, f"{far.sum()} far vertices, agreement {frac:.4f} (need >= 0.99)")


def criterion_3():
    ph = make_phantom(PhantomSpec())
    worst = 1.0
    for name in ("inner", "outer"):
        out = propagate_labels(ph.surfaces.central, ph.truth_labels, ph.surfaces[name], name)
        rep = dsc(ph.truth_labels, out, np.arange(len(out)))
        worst = min(worst, min(d.dsc for d in rep.labels.values()))
    rng = np.random.default_rng(3)
    noisy = make_phantom(PhantomSpec(subdivisions=3, noise_amplitude=1.2, bump_amplitude=0.2), rng=rng)
    central = noisy.surfaces.central
    ids = np.arange(central.n_vertices) + 1
    mismatches = 0
    checked = 0
    for name in ("inner", "outer"):
        target = noisy.surfaces[name]
        out, fb = propagate_labels(central, ids, target, name, return_fallback=True)
        normals = vertex_normals(target)
        sign = PropagationDirection.parse(name).sign
        for i in range(target.n_vertices):
            idx, used = brute_halfspace(central.vertices, target.vertices[i], normals[i], sign)
            mismatches += int(out[i] != idx + 1 or fb[i] != used)
            checked += 1
    ok = worst >= 0.98 and mismatches == 0 and central.n_vertices <= 5000
    return report(3, ok, f"min per-label DSC {worst:.4f} (need >= 0.98); "
                         f"{mismatches}/{checked} brute-force mismatches on {central.n_vertices} vertices")


def criterion_4():
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(100):
        m = make_icosphere(1.0, int(rng.integers(1, 3)))
        labels = rng.integers(1, int(rng.integers(2, 8)), m.n_vertices)
        mask = rng.random(m.n_vertices) < rng.uniform(0.05, 0.95)
        mask[rng.integers(m.n_vertices)] = False
        out, it = fill_iterative(m, labels, mask)
        ref, ref_it = jacobi_fill(m.faces, m.n_vertices, labels, mask)
        bad += int(out.tolist() != ref or it != ref_it)
    return report(4, bad == 0, f"100 random masked meshes, {bad} disagreements")


def _run_pair(root, deg, axis, translate, seed):
    pair = root / f"pair_{seed}"
    out = root / f"report_{seed}"
    argv = ["synth", "--out-dir", pair, "--pair", "--noise", 0.3, "--seed", seed,
            "--delta-deg", deg, "--delta-axis", *axis, "--delta-translate", *translate]
    t0 = time.perf_counter()
    codes = [cli_main([str(a) for a in argv])]
    codes += [cli_main(["run", "--subject", str(pair / side)]) for side in ("scan", "rescan")]
    codes.append(cli_main(["evaluate", "--scan", str(pair / "scan"), "--rescan", str(pair / "rescan"),
                           "--out-dir", str(out)]))
    dt = time.perf_counter() - t0
    summary = json.loads((out / "summary.json").read_text())
    return codes, dt, summary["dsc"]["central"]["median_per_label"][0]


def criterion_5():
    cases = [(3.0, (1, 1, 0), (2, 0, 0)), (3.0, (0, 0, 1), (0, 1.4, 1.4)), (1.5, (1, 0, 0), (1, 0, 0))]
    ok = True
    details = []
    with tempfile.TemporaryDirectory() as tmp, contextlib.redirect_stderr(sys.stdout):
        for seed, (deg, axis, tr) in enumerate(cases):
            codes, dt, median = _run_pair(Path(tmp), deg, axis, tr, seed)
            ok &= all(c == 0 for c in codes) and median >= 0.90 and dt < 120
            details.append(f"{deg:g} deg/{np.linalg.norm(tr):.1f} mm: median {median:.4f} in {dt:.1f} s")
    return report(5, ok, "; ".join(details) + " (need >= 0.90, < 120 s)")


def criterion_6():
    rng = np.random.default_rng(6)
    worst = 0.0
    for n in range(1, 13):
        for _ in range(5):
            d = rng.integers(-4, 5, n).astype(float) + 0.5 * rng.integers(0, 2, n)
            if not np.any(d):
                d[0] = 1.0
            r = wilcoxon_signed_rank(d)
            worst = max(worst, abs(r.p_two_sided - signed_rank_p_enumerated(d)))
    p5 = wilcoxon_signed_rank([1, 2, 3, 4, 5]).p_two_sided
    r = pearson([1, 2, 3, 4], [2, 1, 4, 3])
    ok = worst <= 1e-10 and p5 == 0.0625 and abs(r - 0.6) <= 1e-12
    return report(6, ok, f"max |p - enumeration| {worst:.1e}; n=5 p {p5!r}; pearson r {r!r}")


def criterion_7():
    central = make_phantom(PhantomSpec(subdivisions=3, bump_amplitude=DEFAULT_BUMP_AMPLITUDE)).surfaces.central
    rng = np.random.default_rng(7)
    worst_a = worst_t = 0.0
    max_it = 0
    for _ in range(6):
        axis = rng.normal(size=3)
        direction = rng.normal(size=3)
        t = RigidTransform.from_axis_angle(axis, np.radians(rng.uniform(1, 10)),
                                           direction / np.linalg.norm(direction) * rng.uniform(0.5, 5))
        res = icp_rigid(central, t.apply_mesh(central))
        a, d = relative_error(res.transform, t)
        worst_a, worst_t, max_it = max(worst_a, a), max(worst_t, d), max(max_it, res.iterations)
    ok = worst_a < 1e-3 and worst_t < 1e-2 and max_it <= 50
    return report(7, ok, f"6 transforms, worst {worst_a:.1e} rad / {worst_t:.1e} mm, max {max_it} iterations")


def criterion_8():
    rng = np.random.default_rng(8)
    labels = rng.integers(1, 20, 1000)
    same = dsc(labels, labels, np.arange(1000))
    identical = all(d.dsc == 1.0 for d in same.labels.values()) and same.overall == 1.0
    hand = dsc([1, 1, 2, 2], [1, 2, 2, 2], np.arange(4))
    ok = identical and abs(hand[1] - 2 / 3) < 1e-4 and abs(hand[2] - 0.8) < 1e-4 and abs(hand.overall - 0.75) < 1e-4
    return report(8, ok, f"identical -> 1.0: {identical}; hand case {hand[1]:.4f}/{hand[2]:.4f}/{hand.overall:.4f}")


def _expect(exc, fn):
    try:
        fn()
    except exc:
        return True
    except Exception:
        return False
    return False


def criterion_9():
    rng = np.random.default_rng(9)
    checks = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for k in range(5):
            m = make_icosphere(float(rng.uniform(1, 50)), int(rng.integers(0, 3)))
            v = m.vertices + rng.normal(scale=0.1, size=m.vertices.shape)
            mesh = TriangleMesh(v, m.faces)
            write_off(mesh, tmp / "m.off")
            got = read_mesh(tmp / "m.off")
            checks.setdefault("off", True)
            checks["off"] &= np.array_equal(got.vertices, v) and np.array_equal(got.faces, m.faces)
            for binary in (True, False):
                write_ply(mesh, tmp / "m.ply", binary=binary)
                got = read_mesh(tmp / "m.ply")
                # PLY stores float32 coordinates
                v32 = v.astype(np.float32).astype(np.float64)
                checks.setdefault("ply", True)
                checks["ply"] &= np.array_equal(got.vertices, v32) and np.array_equal(got.faces, m.faces)
            labels = rng.integers(0, 2**31 - 1, int(rng.integers(1, 500)))
            write_labels(labels, tmp / "l.labels")
            checks.setdefault("labels", True)
            checks["labels"] &= np.array_equal(read_labels(tmp / "l.labels", len(labels)), labels)
            data = rng.integers(0, 300 if k % 2 else 100, tuple(rng.integers(1, 12, 3)))
            affine = np.eye(4)
            affine[:3, :3] = np.diag(rng.uniform(0.5, 2, 3))
            affine[:3, 3] = rng.normal(scale=50, size=3)
            vol = LabelVolume(data, affine)
            write_nifti(vol, tmp / "v.nii")
            got = read_nifti(tmp / "v.nii")
            # sform rows are float32 in the header
            checks.setdefault("nifti", True)
            checks["nifti"] &= np.array_equal(got.data, data) and np.array_equal(
                got.affine, affine.astype(np.float32).astype(np.float64))
            write_native_volume(vol, tmp / "v.json")
            got = read_native_volume(tmp / "v.json")
            checks.setdefault("native", True)
            checks["native"] &= np.array_equal(got.data, data) and np.array_equal(got.affine, affine)

        (tmp / "bad.off").write_text("OFX\n")
        checks["bad magic"] = _expect(UnknownMagicError, lambda: read_mesh(tmp / "bad.off"))
        (tmp / "short.off").write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
        checks["truncated"] = _expect(TruncatedFileError, lambda: read_mesh(tmp / "short.off"))
        (tmp / "range.off").write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n")
        checks["index range"] = _expect(IndexRangeError, lambda: read_mesh(tmp / "range.off"))
        (tmp / "cut.nii").write_bytes((tmp / "v.nii").read_bytes()[:200])
        checks["nifti truncated"] = _expect(FormatError, lambda: read_nifti(tmp / "cut.nii"))
        write_labels([1, 2, 3], tmp / "three.labels")
        checks["label count"] = _expect(FormatError, lambda: read_labels(tmp / "three.labels", 4))
        crashes = 0
        for _ in range(200):
            blob = bytearray((tmp / "m.ply").read_bytes())
            for i in rng.integers(0, len(blob), 4):
                blob[i] = int(rng.integers(0, 256))
            (tmp / "fuzz.ply").write_bytes(bytes(blob))
            try:
                read_mesh(tmp / "fuzz.ply")
            except (FormatError, ValidationError):
                pass
            except Exception:
                crashes += 1
        checks["fuzz"] = crashes == 0
    failed = [k for k, v in checks.items() if not v]
    return report(9, not failed, f"{len(checks)} checks, failed: {failed or 'none'}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 10)])
def test_criterion(criterion, capsys):
    ok = criterion()
    line = capsys.readouterr().out.strip().splitlines()[-1]
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
