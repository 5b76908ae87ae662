"""Entropy and dimension bookkeeping along a one-step chain of flag spaces:
estimate per-arrow fiber dimensions by conditioning the stationary
configuration cloud on its coarse projection, then compare the weighted sum
against the random-walk entropy and the summed fiber dimensions against the
directly estimated cloud dimension.

Run:  python demos/ledrappier_young.py   (several minutes; this is the
heaviest demo, a scaled-down version of `furstlab report ly`)
"""

import json

from furstlab.pipeline import run_ly_pipeline
from furstlab.presets import load_preset

mu = load_preset("sl3-zariski")
report = run_ly_pipeline(mu, seed=0, steps=2 * 10 ** 5, n_points=5 * 10 ** 4)

print("per-arrow measurements (exponent gap times fiber dimension):")
for a in report["arrows"]:
    print(f"  ({a['i']},{a['j']})  chi = {a['chi']:+.4f}"
          f"  gamma = {a['gamma']:.3f} (ci {a['gamma_ci']:.3f})")

h = report["entropy"]["h"]
print()
print(f"entropy            h        = {h:.4f}")
print(f"weighted gap sum   kappa    = {report['kappa']:.4f}"
      f"   (relative gap {abs(report['kappa'] - h) / h:.1%})")
print(f"fiber dim sum      sum(g)   = {report['gamma_sum']:.4f}")
print(f"direct cloud dim   delta    = {report['delta']['value']:.4f}"
      f" (ci {report['delta']['ci']:.4f})")
print(f"lyapunov dimension dim_ly   = {report['lyapdim']:.4f}")
print(f"z-scores: {json.dumps(report['checks'])}")
if report["flagged"]:
    print(f"flagged arrows: {report['flagged']}")
