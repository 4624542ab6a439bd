"""Rauzy-Veech induction on a random 4-interval exchange.

Walks from one random IET to its renormalization data: the Rauzy class of
(4,3,2,1), the first induction steps, the substitution read off the Rokhlin
towers, and the Lyapunov spectrum of the cocycle.

    python demos/rauzy_induction_tour.py [seed]
"""
import sys

import numpy as np

from rauzy_spectra.cocycle import rauzy_lyapunov
from rauzy_spectra.iet import block_substitution, find_positive_simple_loop, induced_length, rauzy_class, rauzy_path, sample_iet
from rauzy_spectra.substitution import subst_matrix

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
PI = (4, 3, 2, 1)

C = rauzy_class(PI, labelled=True)
print(f"Rauzy class of {PI}: {len(C)} labelled vertices, strongly connected: {C.is_strongly_connected()}")

T = sample_iet(PI, seed)
print("lengths:", np.round(T.lengths, 4))

path = rauzy_path(T, 12)
print("first 12 kinds:", path.kinds)
print(f"induced interval has length {induced_length(path):.5f}")

# The tower substitution lists the floors each induced subinterval climbs
# before returning; its matrix is the product of the step matrices.
z = block_substitution(T, path)
for j, img in enumerate(z.images, 1):
    print(f"  zeta({j}) = {''.join(map(str, img))}")
assert np.array_equal(subst_matrix(z), path.length_product())

loop = find_positive_simple_loop(PI)
print(f"shortest positive loop at the base vertex: {loop.word} (image lengths {[int(x) for x in loop.substitution.lengths()]})")

est = rauzy_lyapunov(T, 300_000, seed=seed)
print("Lyapunov exponents per induction step:")
for i, (t, e) in enumerate(zip(est.theta, est.stderr), 1):
    print(f"  theta_{i} = {t:+.5f} +/- {e:.5f}")
print(f"theta_2 / theta_1 = {est.theta[1] / est.theta[0]:.3f}  (genus two: close to 1/3)")
