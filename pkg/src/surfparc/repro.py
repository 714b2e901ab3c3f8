"""Scan-rescan reproducibility: registration, matching, Dice and statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometryError, ValidationError
from .mesh import TriangleMesh, check_labels, per_label_area
from .propagate import SurfaceSet
from .spatial import PointIndex, SurfaceIndex, sqdist
from .transform import RigidTransform

SURFACES = ("inner", "central", "outer")
EXACT_WILCOXON_MAX_N = 25


# -- registration -----------------------------------------------------------

def kabsch(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rotation and translation taking ``source`` onto ``target``."""
    cs = source.mean(axis=0)
    ct = target.mean(axis=0)
    h = (source - cs).T @ (target - ct)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    # SVD output is orthonormal up to rounding; polish so the invariant holds tightly
    u2, _, vt2 = np.linalg.svd(r)
    r = u2 @ vt2
    return RigidTransform(r, ct - r @ cs)


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    iterations: int
    converged: bool
    mean_distance: float


def _pose_vector(t: RigidTransform) -> np.ndarray:
    return np.r_[Rotation.from_matrix(t.rotation).as_rotvec(), t.translation]


def _from_pose_vector(x: np.ndarray) -> RigidTransform:
    r = Rotation.from_rotvec(x[:3]).as_matrix()
    u, _, vt = np.linalg.svd(r)
    return RigidTransform(u @ vt, x[3:])


def _parabola_min(pts):
    (x0, y0), (x1, y1), (x2, y2) = pts
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den
    if a <= 0:
        return None
    xv = -b / (2 * a)
    return xv if x0 < xv < x2 else None


def icp_rigid(source: TriangleMesh, target: TriangleMesh, max_iters: int = 50,
              tol: float = 1e-6, match: str = "surface", max_step: float = 1e4) -> IcpResult:
    """Rigid ICP from the identity, matching vertices to the closest surface point.

    Each iteration solves the closed-form fit of the original source vertices
    to their current closest points on ``target``. Plain ICP creeps along
    shallow valleys, so the update is then extrapolated: the step in
    (rotation vector, translation) space is scaled by 2, 4, ... while the mean
    squared match distance keeps falling, then refined with a parabola.

    Stops once the mean match distance changes by less than ``tol``.

    Parameters
    ----------
    source, target : TriangleMesh
        The transform returned maps ``source`` onto ``target``.
    max_iters : int
        Iteration budget; exceeding it returns ``converged=False``.
    match : {"surface", "vertex"}
        ``"vertex"`` pairs each source vertex with the nearest target vertex.
        On a regular lattice that snaps to neighbouring vertices and stalls
        well short of the true pose, hence the surface default.
    """
    src = source.vertices
    if len(src) == 0 or target.n_vertices == 0:
        raise ValidationError("icp needs non-empty meshes")
    sv = np.linalg.svd(src - src.mean(axis=0), compute_uv=False)
    if len(src) < 3 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("source vertices are collinear; rotation is undetermined")
    if match == "surface":
        closest = SurfaceIndex(target).closest
    elif match == "vertex":
        points = PointIndex(target.vertices)

        def closest(q):
            return points.points[points.nearest(q)]
    else:
        raise ValidationError(f"unknown match mode {match!r}")

    def cost(x):
        moved = _from_pose_vector(x).apply(src)
        return float(sqdist(moved, closest(moved)).mean())

    x = np.zeros(6)
    transform = RigidTransform.identity()
    previous = math.inf
    mean = math.inf
    for it in range(1, max_iters + 1):
        moved = transform.apply(src)
        target_pts = closest(moved)
        d2 = sqdist(moved, target_pts)
        mean = float(np.sqrt(d2).mean())
        if abs(previous - mean) < tol:
            return IcpResult(transform, it, True, mean)
        previous = mean
        step = _pose_vector(kabsch(src, target_pts)) - x
        samples = [(0.0, float(d2.mean())), (1.0, cost(x + step))]
        best = 1.0 if samples[1][1] <= samples[0][1] else 0.0
        if best:
            m = 2.0
            while m <= max_step:
                c = cost(x + m * step)
                samples.append((m, c))
                if c >= samples[-2][1]:
                    break
                best = m
                m *= 2.0
            samples.sort()
            i = [p[0] for p in samples].index(best)
            if 0 < i < len(samples) - 1:
                xv = _parabola_min(samples[i - 1:i + 2])
                if xv is not None and cost(x + xv * step) < dict(samples)[best]:
                    best = xv
        else:
            # the closed-form fit never increases the cost against fixed
            # matches; accept it anyway so rematching can proceed
            best = 1.0
        x = x + best * step
        transform = _from_pose_vector(x)
    return IcpResult(transform, max_iters, False, mean)


def closest_point_correspondence(a: TriangleMesh, b: TriangleMesh) -> np.ndarray:
    """Index of the nearest ``b`` vertex for every ``a`` vertex (ties: smaller index)."""
    if b.n_vertices == 0:
        raise ValidationError("cannot match against an empty mesh")
    return PointIndex(b.vertices).nearest(a.vertices)


# -- Dice -------------------------------------------------------------------

@dataclass(frozen=True)
class LabelDice:
    dsc: float
    matched: int
    count_a: int
    count_b: int


@dataclass(frozen=True)
class DscReport:
    labels: dict[int, LabelDice]
    overall: float

    @property
    def median(self) -> float:
        if not self.labels:
            return float("nan")
        return float(np.median([d.dsc for d in self.labels.values()]))

    def __getitem__(self, label) -> float:
        return self.labels[int(label)].dsc


def dsc(labels_a, labels_b, corr) -> DscReport:
    """Per-label Dice over matched vertices plus the overall matched fraction.

    ``corr[i]`` is the vertex of surface B matched to vertex ``i`` of A. A
    label counts as matched at ``i`` when both ``labels_a[i]`` and
    ``labels_b[corr[i]]`` equal it.
    """
    labels_a = np.asarray(labels_a, dtype=np.int64)
    labels_b = np.asarray(labels_b, dtype=np.int64)
    corr = np.asarray(corr, dtype=np.int64)
    if corr.shape != labels_a.shape:
        raise ValidationError("correspondence must have one entry per vertex of A")
    if len(corr) and (corr.min() < 0 or corr.max() >= len(labels_b)):
        raise ValidationError("correspondence index out of range for B")
    hits = labels_a == labels_b[corr]
    size = int(max(labels_a.max(initial=0), labels_b.max(initial=0))) + 1
    matched = np.bincount(labels_a[hits], minlength=size)
    count_a = np.bincount(labels_a, minlength=size)
    count_b = np.bincount(labels_b, minlength=size)
    out = {}
    for lab in np.flatnonzero((count_a + count_b) > 0):
        m, na, nb = int(matched[lab]), int(count_a[lab]), int(count_b[lab])
        out[int(lab)] = LabelDice(2.0 * m / (na + nb), m, na, nb)
    denom = (len(labels_a) + len(labels_b)) / 2.0
    overall = float(matched.sum() / denom) if denom else float("nan")
    return DscReport(out, overall)


# -- surface metrics ---------------------------------------------------------

def vertex_thickness(inner: TriangleMesh, outer: TriangleMesh, shared_topology: bool) -> np.ndarray:
    if shared_topology:
        if inner.n_vertices != outer.n_vertices:
            raise ValidationError("shared topology requires equal vertex counts")
        return np.sqrt(sqdist(outer.vertices, inner.vertices))
    match = closest_point_correspondence(inner, outer)
    return np.sqrt(sqdist(outer.vertices[match], inner.vertices))


def cortical_thickness(inner: TriangleMesh, outer: TriangleMesh, labels,
                       shared_topology: bool) -> dict[int, float]:
    """Mean inner-to-outer distance per label, averaged over inner vertices."""
    labels = check_labels(labels, inner.n_vertices)
    t = vertex_thickness(inner, outer, shared_topology)
    present = np.unique(labels)
    sums = np.bincount(labels, weights=t)
    counts = np.bincount(labels)
    return {int(lab): float(sums[lab] / counts[lab]) for lab in present}


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValidationError("pearson needs two equal-length sequences of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValidationError("correlation undefined: zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


# -- Wilcoxon signed rank ------------------------------------------------------

@dataclass(frozen=True)
class SignedRankResult:
    w_plus: float
    n_effective: int
    p_two_sided: float
    method: str

    def to_dict(self) -> dict:
        return {"w_plus": self.w_plus, "n_effective": self.n_effective,
                "p_two_sided": self.p_two_sided, "method": self.method}


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def signed_rank_null_counts(doubled_ranks) -> np.ndarray:
    """Number of sign assignments reaching each doubled positive-rank sum."""
    doubled_ranks = [int(r) for r in doubled_ranks]
    counts = np.zeros(sum(doubled_ranks) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[:len(counts) - r].copy()
    return counts


def wilcoxon_signed_rank(diffs, exact_max_n: int = EXACT_WILCOXON_MAX_N) -> SignedRankResult:
    """Two-sided Wilcoxon signed rank test on paired differences.

    Zero differences are dropped and tied magnitudes share their average rank.
    Up to ``exact_max_n`` non-zero differences the null distribution is
    enumerated exactly (working on doubled ranks keeps tied half-ranks
    integral); beyond that a normal approximation with continuity and tie
    corrections is used.
    """
    d = np.asarray(diffs, dtype=np.float64).ravel()
    if d.size == 0:
        raise ValidationError("wilcoxon needs at least one difference")
    if not np.all(np.isfinite(d)):
        raise ValidationError("differences must be finite")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return SignedRankResult(0.0, 0, 1.0, "exact")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        counts = signed_rank_null_counts(np.rint(2 * ranks))
        w2 = int(round(2 * w_plus))
        total = float(2 ** n)
        lower = counts[:w2 + 1].sum() / total
        upper = counts[w2:].sum() / total
        p = min(1.0, 2.0 * min(lower, upper))
        return SignedRankResult(w_plus, n, float(p), "exact")
    mean = n * (n + 1) / 4.0
    _, ties = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(ties ** 3 - ties)) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return SignedRankResult(w_plus, n, p, "normal-approximation")


def compare_methods(scores_a, scores_b) -> SignedRankResult:
    """Paired signed rank test between two methods' per-subject scores."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("paired scores must have equal length")
    return wilcoxon_signed_rank(a - b)


# -- pair evaluation ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LabeledSurfaces:
    surfaces: SurfaceSet
    labels: dict[str, np.ndarray]

    def __post_init__(self):
        labels = {}
        for name in SURFACES:
            if name not in self.labels:
                raise ValidationError(f"missing labels for {name} surface")
            labels[name] = check_labels(self.labels[name], self.surfaces[name].n_vertices)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class MetricRow:
    label: int
    area_scan: float
    area_rescan: float
    thickness_scan: float
    thickness_rescan: float


@dataclass
class PairEvaluation:
    dsc: dict[str, DscReport]
    metrics: list[MetricRow]
    transforms: dict[str, RigidTransform]
    icp_iterations: dict[str, int] = field(default_factory=dict)


def surface_metrics(subject: LabeledSurfaces) -> tuple[dict[int, float], dict[int, float]]:
    s = subject.surfaces
    area = per_label_area(s.central, subject.labels["central"])
    thick = cortical_thickness(s.inner, s.outer, subject.labels["inner"], s.shared_topology)
    return area, thick


def evaluate_pair(scan: LabeledSurfaces, rescan: LabeledSurfaces,
                  per_surface_registration: bool = False,
                  icp_max_iters: int = 50, icp_tol: float = 1e-6) -> PairEvaluation:
    """Register rescan onto scan, match vertices and score every surface.

    By default one transform, fitted on the central surfaces, moves all three
    rescan surfaces; ``per_surface_registration`` fits each surface on its own.
    """
    transforms, iterations = {}, {}
    if per_surface_registration:
        for name in SURFACES:
            res = icp_rigid(rescan.surfaces[name], scan.surfaces[name], icp_max_iters, icp_tol)
            transforms[name], iterations[name] = res.transform, res.iterations
    else:
        res = icp_rigid(rescan.surfaces.central, scan.surfaces.central, icp_max_iters, icp_tol)
        for name in SURFACES:
            transforms[name], iterations[name] = res.transform, res.iterations

    reports = {}
    for name in SURFACES:
        moved = transforms[name].apply_mesh(rescan.surfaces[name])
        corr = closest_point_correspondence(scan.surfaces[name], moved)
        reports[name] = dsc(scan.labels[name], rescan.labels[name], corr)

    # area and thickness are invariant under rigid motion; no need to move the rescan
    area_a, thick_a = surface_metrics(scan)
    area_b, thick_b = surface_metrics(rescan)
    rows = []
    for lab in sorted(set(area_a) & set(area_b)):
        rows.append(MetricRow(
            lab, area_a[lab], area_b[lab],
            thick_a.get(lab, float("nan")), thick_b.get(lab, float("nan")),
        ))
    return PairEvaluation(reports, rows, transforms, iterations)


def cohort_summary(evaluations: list[PairEvaluation],
                   exact_max_n: int = EXACT_WILCOXON_MAX_N) -> dict:
    """Aggregate statistics over one or more evaluated pairs.

    Pearson correlations pair scan with rescan values; the signed rank test
    runs on the scan minus rescan differences. Labels need three or more pairs
    for a per-label correlation, otherwise ``None`` is reported.
    """
    summary: dict = {"n_pairs": len(evaluations), "dsc": {}, "pearson": {}, "wilcoxon": {}}
    for name in SURFACES:
        summary["dsc"][name] = {
            "median_per_label": [e.dsc[name].median for e in evaluations],
            "overall": [e.dsc[name].overall for e in evaluations],
        }
    for metric in ("area", "thickness"):
        xs, ys, by_label = [], [], {}
        for e in evaluations:
            for row in e.metrics:
                a, b = getattr(row, f"{metric}_scan"), getattr(row, f"{metric}_rescan")
                if math.isfinite(a) and math.isfinite(b):
                    xs.append(a)
                    ys.append(b)
                    by_label.setdefault(row.label, ([], []))
                    by_label[row.label][0].append(a)
                    by_label[row.label][1].append(b)
        try:
            pooled = pearson(xs, ys)
        except ValidationError:
            pooled = None
        per_label = {}
        for lab, (a, b) in sorted(by_label.items()):
            try:
                per_label[str(lab)] = pearson(a, b) if len(a) >= 3 else None
            except ValidationError:
                per_label[str(lab)] = None
        summary["pearson"][metric] = {"pooled": pooled, "per_label": per_label}
        summary["wilcoxon"][metric] = (
            wilcoxon_signed_rank(np.subtract(xs, ys), exact_max_n).to_dict() if xs else None
        )
    return summary
