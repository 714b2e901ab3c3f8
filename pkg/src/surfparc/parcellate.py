"""Volume segmentation based surface parcellation."""
import numpy as np

from .mesh import TriangleMesh
from .volume import DEFAULT_SEARCH_CAP_MM, CorticalLabelSearch, LabelTable, LabelVolume


def vsbsp(central: TriangleMesh, volume: LabelVolume, table: LabelTable,
          search_cap: float = DEFAULT_SEARCH_CAP_MM) -> np.ndarray:
    """Label every vertex with the nearest cortical voxel label.

    All-or-nothing: if any vertex has no cortical voxel within ``search_cap``
    an :class:`~surfparc.errors.OrphanVertexError` listing every such vertex is
    raised and no labels are returned.
    """
    search = CorticalLabelSearch(volume, table, search_cap)
    return search.labels_for(central.vertices)
