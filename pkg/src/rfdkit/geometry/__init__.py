"""Geometry kernels: boxes, sampling, meshes, voxel grids, file io."""

from .mesh import TriangleMesh, concat_meshes
from .boxes import (
    OrientedBox,
    box_iou,
    box_iou_axis_aligned,
    canonical_align,
    nearest_gt_centers,
    nms_3d,
    rot_z,
    wrap_angle,
)
from .sampling import PointCluster, ball_query, ball_query_group, farthest_point_sample
from .voxel import VoxelGrid, grid_iou, lattice_iou, lattice_keys, point_in_mesh, voxelize_mesh, voxelize_on_lattice
from .meshio import (
    read_mesh_ply,
    read_point_ply,
    write_mesh_ply,
    write_obj,
    write_point_ply,
)

__all__ = [
    "TriangleMesh", "concat_meshes",
    "OrientedBox", "box_iou", "box_iou_axis_aligned", "canonical_align",
    "nearest_gt_centers", "nms_3d", "rot_z", "wrap_angle",
    "PointCluster", "ball_query", "ball_query_group", "farthest_point_sample",
    "VoxelGrid", "grid_iou", "lattice_iou", "lattice_keys", "point_in_mesh",
    "voxelize_mesh", "voxelize_on_lattice",
    "read_mesh_ply", "read_point_ply", "write_mesh_ply", "write_obj", "write_point_ply",
]
