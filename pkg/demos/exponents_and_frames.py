"""Estimate Lyapunov spectra for the bundled presets, recover the Oseledets
splitting, and cross-check the exponents against singular values of long
products.

Run:  python demos/exponents_and_frames.py   (about a minute)
"""

import numpy as np

from furstlab.presets import list_presets, load_preset
from furstlab.walk import (
    LyapunovSpectrum,
    MatrixMeasure,
    lyapunov_spectrum,
    oseledets_frames,
    partial_sum_check,
)

print("spectra at 2e5 steps:")
for name in list_presets():
    mu = load_preset(name)
    spec = lyapunov_spectrum(mu, 2 * 10 ** 5, seed=0)
    chis = "  ".join(f"{c:+.4f}" for c in spec.chi)
    print(f"  {name:14s} chi = [{chis}]   simple={spec.is_simple()}")

# Deterministic sanity check: for a single matrix the Oseledets lines are its
# eigenvectors, in decreasing order of |eigenvalue|.
a = np.array([[1.0, 0.3, -0.2], [0.1, 1.2, 0.4], [-0.3, 0.2, 0.9]])
g = a @ np.diag([4.0, 1.0, 0.25]) @ np.linalg.inv(a)
g /= np.cbrt(np.linalg.det(g))
mu_det = MatrixMeasure(3, ((1.0, g),))
chi = np.log([4.0, 1.0, 0.25])
chi -= chi.mean()
frame = oseledets_frames(mu_det, depth=60, seed=1,
                         spectrum=LyapunovSpectrum(chi, np.zeros(3), steps=0))
evals, evecs = np.linalg.eig(g)
order = np.argsort(-np.abs(evals))
print()
print("deterministic case, |<line_k, eigvec_k>| (should all be 1):")
for k, line in enumerate(frame.lines):
    v = evecs[:, order[k]].real
    v /= np.linalg.norm(v)
    print(f"  line {k + 1}: {abs(v @ line.frame[:, 0]):.10f}")

# Stochastic case: the splitting converges (small residual) and the partial
# sums of exponents match log singular values of independent long products.
mu = load_preset("sl3-zariski")
spec = lyapunov_spectrum(mu, 2 * 10 ** 5, seed=0)
frame = oseledets_frames(mu, depth=250, seed=2, spectrum=spec)
print()
print(f"sl3-zariski splitting residual: {frame.residual:.2e}")
print("partial sum cross-check (z-scores should be below 3):")
for j in range(1, 4):
    lhs, rhs, z = partial_sum_check(mu, spec, j, samples=20000, seed=3 + j)
    print(f"  j={j}: product estimate {lhs:+.4f}  spectrum sum {rhs:+.4f}  z={z:+.2f}")
