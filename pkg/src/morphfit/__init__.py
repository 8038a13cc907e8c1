"""Partition-based nonrigid registration of landmarked template meshes."""

from .config import RegistrationConfig, read_config, write_config
from .errors import MorphfitError
from .landmarks import LandmarkSet, read_landmarks, write_landmarks
from .mesh import Mesh, PointCloud, compute_vertex_normals, validate_manifold
from .meshio import load_mesh, load_target, save_mesh
from .partition import PartitionMap, PartitionSpec, build_partition, read_partition_spec
from .prewarp import SmoothingConfig, fit_part_affine, prewarp_pipeline
from .solver import EnergyWeights, energy, find_correspondences, register, solve_step
from .spatial import ClosestPointIndex, build_index

__version__ = "0.1.0"

__all__ = [
    "RegistrationConfig", "read_config", "write_config",
    "MorphfitError",
    "LandmarkSet", "read_landmarks", "write_landmarks",
    "Mesh", "PointCloud", "compute_vertex_normals", "validate_manifold",
    "load_mesh", "load_target", "save_mesh",
    "PartitionMap", "PartitionSpec", "build_partition", "read_partition_spec",
    "SmoothingConfig", "fit_part_affine", "prewarp_pipeline",
    "EnergyWeights", "energy", "find_correspondences", "register", "solve_step",
    "ClosestPointIndex", "build_index",
]
