"""Sample the stationary measure of the free SL(2,Z) walk on the projective
line and estimate its dimension two ways: small-ball mass regression and
k-nearest-neighbor distances.  Compare with the entropy over gap prediction.

Run:  python demos/stationary_dimension.py   (about half a minute)
"""

import numpy as np

from furstlab.clouds import knn_dimension, local_dimension, sample_stationary_cloud
from furstlab.entropy import rw_entropy
from furstlab.presets import load_preset
from furstlab.topology import IntervalPartition
from furstlab.walk import lyapunov_spectrum

mu = load_preset("sl2z-free")
q = IntervalPartition.full(2)

cloud = sample_stationary_cloud(mu, q, 10 ** 5, depth=250, seed=0)
print(f"sampled {cloud.n} projective points at depth {cloud.depth}")

est_local = local_dimension(cloud, n_centers=200, seed=1)
est_knn = knn_dimension(cloud, k=10, seed=2)
print(f"small-ball regression: delta = {est_local.delta:.3f} "
      f"(ci {est_local.ci:.3f}, radii {est_local.r_range})")
print(f"knn estimator:         delta = {est_knn.delta:.3f} (ci {est_knn.ci:.3f})")

spec = lyapunov_spectrum(mu, 2 * 10 ** 5, seed=3)
h = rw_entropy(mu, n_max=12)
gap = spec.chi[0] - spec.chi[1]
predicted = min(h.h / gap, 1.0)
print(f"entropy {h.h:.4f}, gap {gap:.4f}, predicted dimension {predicted:.3f}")

# A quick look at the measure itself: histogram of the projective angle.
angles = np.arctan2(cloud.points[:, 1, 0], cloud.points[:, 0, 0]) % np.pi
hist, _ = np.histogram(angles, bins=24, range=(0.0, np.pi))
peak = hist.max()
print("angle histogram (24 bins over [0, pi)):")
for k, c in enumerate(hist):
    bar = "#" * int(50 * c / peak)
    print(f"  {k * np.pi / 24:4.2f} {bar}")
