"""Yaw-robust LiDAR relocalization on a cylindrical voxel grid."""

__version__ = "0.1.0"
