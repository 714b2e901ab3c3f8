"""Label-based cortical surface parcellation with topology correction.

Labels a central cortical surface from a labelled volume, repairs labels that
split into several connected patches, carries the result to the inner and
outer surfaces, and scores scan-rescan reproducibility.
"""
from .errors import (ConvergenceError, FormatError, SurfParcError,
                     ValidationError)
from .mesh import TriangleMesh, label_components, vertex_normals
from .parcellate import vsbsp
from .propagate import PropagationDirection, SurfaceSet, propagate_labels
from .repro import dsc, icp_rigid, wilcoxon_signed_rank
from .topology import topological_correction
from .transform import RigidTransform
from .volume import LabelTable, LabelVolume

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "FormatError", "LabelTable", "LabelVolume",
    "PropagationDirection", "RigidTransform", "SurfParcError", "SurfaceSet",
    "TriangleMesh", "ValidationError", "dsc", "icp_rigid", "label_components",
    "propagate_labels", "topological_correction", "vertex_normals", "vsbsp",
    "wilcoxon_signed_rank",
]
