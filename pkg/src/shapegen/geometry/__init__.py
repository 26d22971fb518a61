from .mesh import (
    TriangleMesh,
    box,
    denormalize_points,
    icosphere,
    load_mesh,
    normalize_to_unit_cube,
    save_obj,
    save_ply,
    scale_to_diagonal,
)
from .sdf import (
    DEFAULT_CUBE,
    DEFAULT_CUTOFF,
    DEFAULT_RESOLUTION,
    SdfSampleSet,
    brute_sdf,
    load_samples,
    nearest_surface_point,
    sample_near_surface,
    sample_training_grid,
    save_samples,
    signed_distance,
    winding_number,
)

__all__ = [
    "DEFAULT_CUBE", "DEFAULT_CUTOFF", "DEFAULT_RESOLUTION", "SdfSampleSet", "TriangleMesh", "box",
    "brute_sdf", "denormalize_points", "icosphere", "load_mesh", "load_samples", "nearest_surface_point",
    "normalize_to_unit_cube", "sample_near_surface", "sample_training_grid", "save_obj", "save_ply",
    "save_samples", "scale_to_diagonal", "signed_distance", "winding_number",
]
