import numpy as np

from laminae.ingest import Cell, CellSet


def cellset_from_points(points, side=0.5):
    """Build a CellSet whose centroids sit exactly at the given points.

    Each cell is a small axis-aligned square centered on its point. All points
    are shifted by a common offset so every vertex stays inside the image
    extent; pairwise distances (all the graph code sees) are unaffected.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    offset = side - min(0.0, points.min())
    points = points + offset
    half = side / 2.0
    cells = []
    for i, (x, y) in enumerate(points):
        poly = np.array(
            [[x - half, y - half], [x + half, y - half], [x + half, y + half], [x - half, y + half]]
        )
        cells.append(Cell(id=i, polygon=poly))
    extent = int(np.ceil(points.max() + side + 1.0))
    return CellSet(cells=cells, image_extent=(extent, extent))
