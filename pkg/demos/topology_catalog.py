"""Walk through the combinatorics layer: enumerate the admissible topologies
on {1..d}, count one-step coarsenings, and decompose a coarsening into a
chain ordered by exponent gaps.

Run:  python demos/topology_catalog.py
"""

import numpy as np

from furstlab.topology import (
    AdmissibleTopology,
    chain_arrows,
    chain_decompose,
    count_one_step_arrows,
    enumerate_admissible,
)

for d in range(1, 6):
    tops = enumerate_admissible(d)
    print(f"d={d}: {len(tops)} admissible topologies, "
          f"{count_one_step_arrows(tops)} one-step arrows")

print()
print("atoms of the 7 topologies for d=3:")
for t in enumerate_admissible(3):
    print("  ", [sorted(t.atom(i)) for i in range(1, 4)])

# A chain from the full flag space down to the product of projective lines,
# removing the smallest exponent gap first.
chi = np.array([0.5, 0.1, -0.6])
t_fine = AdmissibleTopology.finest(3)
t_coarse = AdmissibleTopology.coarsest(3)
chain = chain_decompose(t_fine, t_coarse, chi)
print()
print(f"chain for chi={chi.tolist()}:")
for step, (i, j, gap) in zip(chain[1:], chain_arrows(chain, chi)):
    atoms = [sorted(step.atom(k)) for k in range(1, 4)]
    print(f"  remove pair ({i},{j})  gap {gap:+.2f}  ->  atoms {atoms}")
