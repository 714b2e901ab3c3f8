"""Label topology correction: one connected component per label.

Every component of a label except its largest is marked for fixing; marked
vertices are then refilled from the majority label of their already-labeled
1-ring neighbours, one synchronous sweep at a time, until none remain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ValidationError
from .mesh import UNLABELED, TriangleMesh, check_labels, label_components


@dataclass
class LabelCorrection:
    components_before: int
    vertices_reassigned: int = 0


@dataclass
class CorrectionReport:
    rounds_run: int = 0
    converged: bool = False
    fill_iterations: list[int] = field(default_factory=list)
    labels: dict[int, LabelCorrection] = field(default_factory=dict)

    @property
    def total_reassigned(self) -> int:
        return sum(c.vertices_reassigned for c in self.labels.values())

    def to_dict(self) -> dict:
        return {
            "rounds_run": self.rounds_run,
            "converged": self.converged,
            "fill_iterations": list(self.fill_iterations),
            "total_reassigned": self.total_reassigned,
            "labels": [
                {
                    "label": lab,
                    "components_before": c.components_before,
                    "vertices_reassigned": c.vertices_reassigned,
                }
                for lab, c in sorted(self.labels.items())
            ],
        }


def detect_non_occ(mesh: TriangleMesh, labels) -> np.ndarray:
    """Mask of vertices lying outside their label's largest component."""
    labels = check_labels(labels, mesh.n_vertices)
    if np.any(labels == UNLABELED):
        bad = np.flatnonzero(labels == UNLABELED)
        raise ValidationError(
            f"{len(bad)} unlabeled vertices; topology check needs a fully labeled surface",
            vertices=bad[:20].tolist(),
        )
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    for comps in label_components(mesh, labels).values():
        for c in comps[1:]:
            mask[c] = True
    return mask


def fill_iterative(mesh: TriangleMesh, labels, mask, max_iters: int = 1000):
    """Jacobi majority fill of masked vertices.

    In each iteration every masked vertex with at least one unmasked neighbour
    (as of the previous iteration) takes the most frequent label among those
    neighbours, smallest label on ties, and becomes unmasked.

    Returns
    -------
    labels : ndarray
        Filled labels; unmasked input vertices are untouched.
    iterations : int
        Number of sweeps that changed something.
    """
    labels = check_labels(labels, mesh.n_vertices).copy()
    mask = np.asarray(mask, dtype=bool).copy()
    if mask.shape != labels.shape:
        raise ValidationError("mask length does not match vertex count")
    if mask.all() and len(mask):
        raise ValidationError("every vertex is masked; nothing to fill from")
    src, dst = mesh.adjacency.edges()
    iterations = 0
    while mask.any():
        if iterations >= max_iters:
            raise ConvergenceError(
                f"fill did not finish in {max_iters} iterations",
                vertices=np.flatnonzero(mask)[:1000].tolist(),
            )
        sel = mask[src] & ~mask[dst]
        if not sel.any():
            # no masked vertex touches a labeled one: nothing can change any more
            raise ConvergenceError(
                f"{int(mask.sum())} masked vertices cannot reach a labeled vertex",
                vertices=np.flatnonzero(mask)[:1000].tolist(),
            )
        v = src[sel]
        lab = labels[dst[sel]]
        pairs, counts = np.unique(np.stack([v, lab], axis=1), axis=0, return_counts=True)
        # per vertex: highest count first, then smallest label
        order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
        pairs = pairs[order]
        first = np.r_[True, pairs[1:, 0] != pairs[:-1, 0]]
        winners = pairs[first]
        labels[winners[:, 0]] = winners[:, 1]
        mask[winners[:, 0]] = False
        iterations += 1
    return labels, iterations


def topological_correction(mesh: TriangleMesh, labels, max_rounds: int = 5,
                           max_iters: int = 1000):
    """Repeat detection and filling until every label is one component.

    Raises :class:`~surfparc.errors.ConvergenceError` carrying the report if
    labels are still split after ``max_rounds`` rounds.
    """
    labels = check_labels(labels, mesh.n_vertices).copy()
    report = CorrectionReport()
    report.labels = {
        lab: LabelCorrection(len(c)) for lab, c in label_components(mesh, labels).items()
    }
    rounds = 0
    while True:
        mask = detect_non_occ(mesh, labels)
        if not mask.any():
            report.converged = True
            break
        if rounds >= max_rounds:
            report.rounds_run = rounds
            raise ConvergenceError(
                f"labels still split after {max_rounds} correction rounds",
                report=report,
                vertices=np.flatnonzero(mask)[:1000].tolist(),
            )
        for lab, n in zip(*np.unique(labels[mask], return_counts=True)):
            entry = report.labels.setdefault(int(lab), LabelCorrection(0))
            entry.vertices_reassigned += int(n)
        try:
            labels, iters = fill_iterative(mesh, labels, mask, max_iters=max_iters)
        except ConvergenceError as exc:
            report.rounds_run = rounds + 1
            exc.report = report
            raise
        report.fill_iterations.append(iters)
        rounds += 1
    report.rounds_run = max(rounds, 1)
    return labels, report
