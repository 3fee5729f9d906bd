"""Cell-graph laminar analysis of 2D cortical histology.

The package turns a segmented Nissl section (cell polygons plus a region
mask) into a laminar partition of the cells.  The stages are importable on
their own, or composed end to end via :func:`run_pipeline` and the
``laminae`` command-line interface.
"""

from .cellgraph import CellGraph, knn_graph, threshold_graph
from .community import (
    Partition,
    WeightedGraph,
    kmeans_baseline,
    leiden,
    modularity,
    resolution_scan,
    umap_connectivity,
)
from .config import (
    ClusterSettings,
    FeatureSettings,
    LaplaceSettings,
    PipelineConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    load_config,
)
from .embed import (
    Batch,
    ContrastiveConfig,
    EmbeddingSet,
    GcnParams,
    combined_loss,
    gcn_forward,
    init_params,
    train,
)
from .errors import (
    ConvergenceError,
    GenerationError,
    LaminaeError,
    ParseError,
    TrainingError,
    ValidationError,
)
from .features import (
    FeatureMatrix,
    ShapeModes,
    assemble_feature_matrix,
    morphological_features,
    neighbor_distance_stats,
    shape_modes,
    topo_features,
    zscore_columns,
)
from .ingest import (
    Cell,
    CellSet,
    RoiMask,
    load_cells,
    load_roi_mask,
    polygon_area,
    polygon_centroid,
    save_cells,
    save_roi_mask,
)
from .laplace import (
    LaplaceCoordinates,
    LaplaceField,
    cell_laplace_coordinate,
    solve_laplace,
)
from .metrics import MetricsReport, ari, bcubed, evaluate_labels, nmi
from .pipeline import PipelineResult, evaluate_files, run_pipeline
from .synth import BandSpec, SynthConfig, generate, make_preset, synthetic_cortex_5

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "BandSpec",
    "Cell",
    "CellGraph",
    "CellSet",
    "ClusterSettings",
    "ContrastiveConfig",
    "ConvergenceError",
    "EmbeddingSet",
    "FeatureMatrix",
    "FeatureSettings",
    "GcnParams",
    "GenerationError",
    "LaminaeError",
    "LaplaceCoordinates",
    "LaplaceField",
    "LaplaceSettings",
    "MetricsReport",
    "ParseError",
    "Partition",
    "PipelineConfig",
    "PipelineResult",
    "RoiMask",
    "ShapeModes",
    "SynthConfig",
    "TrainingError",
    "ValidationError",
    "WeightedGraph",
    "apply_overrides",
    "ari",
    "assemble_feature_matrix",
    "bcubed",
    "cell_laplace_coordinate",
    "combined_loss",
    "config_from_dict",
    "config_to_dict",
    "evaluate_files",
    "evaluate_labels",
    "gcn_forward",
    "generate",
    "init_params",
    "kmeans_baseline",
    "knn_graph",
    "leiden",
    "load_cells",
    "load_config",
    "load_roi_mask",
    "make_preset",
    "modularity",
    "morphological_features",
    "neighbor_distance_stats",
    "nmi",
    "polygon_area",
    "polygon_centroid",
    "resolution_scan",
    "run_pipeline",
    "save_cells",
    "save_roi_mask",
    "shape_modes",
    "solve_laplace",
    "synthetic_cortex_5",
    "threshold_graph",
    "topo_features",
    "train",
    "umap_connectivity",
    "zscore_columns",
]
