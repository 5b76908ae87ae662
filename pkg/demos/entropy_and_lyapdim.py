"""Random-walk entropy from exact convolution powers, the exponent-gap upper
bound, and the piecewise-affine dimension profile whose root is the Lyapunov
dimension.

Run:  python demos/entropy_and_lyapdim.py   (a few seconds)
"""

import numpy as np

from furstlab.entropy import furstenberg_bound, lyapunov_profile, rw_entropy
from furstlab.presets import load_preset
from furstlab.topology import IntervalPartition
from furstlab.walk import lyapunov_spectrum

mu = load_preset("sl2z-free")
est = rw_entropy(mu, n_max=12)
print("H(mu^(n))/n for the free SL(2,Z) walk:")
for n, v in enumerate(est.sequence, start=1):
    print(f"  n={n:2d}  {v:.4f}")
print(f"extrapolated h = {est.h:.4f} (ci {est.ci:.4f})")
print(f"free group value log(3)/2 = {0.5 * np.log(3.0):.4f}")

print()
print("entropy vs exponent-gap bound on every preset:")
for name in ["diag3", "rot2", "sl2z-free", "sl3-zariski", "sl3-mollified"]:
    mu = load_preset(name)
    h = rw_entropy(mu.without_mollifier(), n_max=10)
    spec = lyapunov_spectrum(mu, 10 ** 5, seed=0)
    bound = furstenberg_bound(spec, IntervalPartition.full(mu.d))
    print(f"  {name:14s} h = {h.h:.4f}  <=  bound {bound:.4f}")

mu = load_preset("sl3-zariski")
spec = lyapunov_spectrum(mu, 2 * 10 ** 5, seed=1)
h = rw_entropy(mu, n_max=12)
profile = lyapunov_profile(h, spec, IntervalPartition.full(3))
print()
print(f"sl3-zariski dimension profile, h = {h.h:.4f}:")
print(f"  slopes (sorted gaps): {[round(l, 4) for l in profile.lambdas]}")
print(f"  D(k) at integers:     {[round(b, 4) for b in profile.breakpoints]}")
print(f"  lyapunov dimension:   {profile.dim_ly:.4f}  (saturated={profile.saturated})")
