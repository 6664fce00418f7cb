
# coding: utf-8

# # Graph attention embedding
#
# One attention layer maps node embeddings H and node inputs x to new
# embeddings. The weight matrix is divided by its spectral norm and the
# attention coefficients by max(D_i, D_j), which keeps the layer from
# expanding the embedding distance in practice.

# In[1]:

import numpy as np

from aoi_lab.gat import (EdgeIndex, GatParams, attention_coeffs, coeff_matrix, contraction_check,
                         edge_features, embedding_distance, fixed_point_iterate, gat_layer)
from aoi_lab.graph import generate_ba, generate_er

rng = np.random.default_rng(0)
g = generate_er(8, 0.4, seed=1)
idx = EdgeIndex.from_graph(g)
E = edge_features(g, idx)
print(g)


# Symmetric normalisation gives a symmetric coefficient matrix whose rows sum
# to at most one; softmax rows sum to exactly one.

# In[2]:

p = GatParams.random(16, 1, 6, rng)
H = rng.standard_normal((8, 16))
for mode in ("sym", "softmax"):
    A = coeff_matrix(attention_coeffs(p, H, E, idx, mode), idx)
    print(mode, "row sums", np.round(A.sum(axis=1), 3), "symmetric", np.allclose(A, A.T))


# Ratio d(f(H), f(H')) / d(H, H') over random pairs. With 64-wide embeddings it
# stays well below one; with very narrow ones the summed-difference distance
# can cancel and the ratio occasionally exceeds one.

# In[3]:

for d in (4, 16, 64):
    worst = 0.0
    for _ in range(100):
        p = GatParams.random(d, 1, 6, rng)
        rep = contraction_check(p, idx, rng.standard_normal((8, 6)), E, 5, rng)
        worst = max(worst, rep.max_ratio)
    print(f"d={d:3d} worst ratio {worst:.3f}")


# Iterating the layer reaches the same fixed point from different starts.

# In[4]:

ba = generate_ba(8, 2, seed=2)
bidx = EdgeIndex.from_graph(ba)
bE = edge_features(ba, bidx)
p = GatParams.random(64, 1, 6, rng)
x = rng.standard_normal((8, 6))
a = fixed_point_iterate(p, bidx, x, bE, rng.standard_normal((8, 64)))
b = fixed_point_iterate(p, bidx, x, bE, 10 * rng.standard_normal((8, 64)))
print("iterations", a.iterations, b.iterations)
print("residuals", np.round(a.residuals[:8], 4))
print("gap between fixed points", embedding_distance(a.H, b.H))
