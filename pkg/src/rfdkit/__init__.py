"""rfdkit: reconstruction-from-detection for 3D point clouds.

Detects oriented object proposals in a point cloud with a vote-based
detector, groups and aligns the supporting points into a canonical frame,
decodes an implicit occupancy function per object, and meshes the result.
Training and evaluation run on procedurally generated synthetic scenes.
"""

__version__ = "0.1.0"
