"""
Depth-map preprocessing
=======================

Build a synthetic depth map of a spherical cap (a stand-in for a face),
crop around the nose tip, recenter and reproject to 112 x 96, and
normalize to a six-channel tensor in [-1, 1].
"""

import numpy as np

from attrloss import rgbd

intr = rgbd.Intrinsics(fx=570.0, fy=570.0, cx=47.5, cy=55.5)
v, u = np.mgrid[0:rgbd.OUT_HEIGHT, 0:rgbd.OUT_WIDTH]

# sphere of radius 150 mm centred 850 mm from the camera; nose tip at 700 mm
r2 = ((u - intr.cx) * 700 / intr.fx) ** 2 + ((v - intr.cy) * 700 / intr.fy) ** 2
depth = np.where(r2 < 150**2, 850.0 - np.sqrt(np.maximum(150**2 - r2, 0.0)), 0.0)
image = rgbd.DepthImage(depth, intr)

cloud = rgbd.unproject(image)
face = rgbd.crop_sphere(cloud, nose_tip=[0.0, 0.0, 700.0])
print(f"{len(cloud)} points, {len(face)} inside the 90 mm sphere")

projected, z_opt = rgbd.recenter_and_project(face, intr)
print(f"z_opt = {z_opt} mm, {projected.mask.sum()} valid output pixels")

rgb = np.full((rgbd.OUT_HEIGHT, rgbd.OUT_WIDTH, 3), 200, dtype=np.uint8)
tensor = rgbd.normalize_tensor(rgb, projected)
for c, name in enumerate("RGBxyz"):
    vals = tensor.data[..., c][tensor.mask]
    print(f"channel {name}: [{vals.min():+.3f}, {vals.max():+.3f}]")
