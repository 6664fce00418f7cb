
# coding: utf-8

# # Age of information on a four-node network
#
# A source (node 0) feeds two destinations (2 and 3) through a router (node 1).
# We push packets along two different multicast trees and watch the AoI of
# each destination respond.

# In[1]:

import numpy as np

from aoi_lab.graph import MulticastTree, fixture_g4, format_edge_list
from aoi_lab.sim import (advance_slot, avg_energy, avg_weighted_aoi, init_state, inject_tree,
                         predicted_arrival, weighted_peak_age)

g = fixture_g4()
print(format_edge_list(g))


# Two candidate trees. T4 routes everything through the router (cheap, 2 hops
# to node 2), T4b uses the expensive direct link to node 2 (1 hop).

# In[2]:

t4 = MulticastTree.from_edges(g, [(0, 1), (1, 2), (1, 3)], {2, 3})
t4b = MulticastTree.from_edges(g, [(0, 1), (0, 2), (1, 3)], {2, 3})
for name, t in (("T4", t4), ("T4b", t4b)):
    print(name, "energy", t.energy, "hops", {u: t.hops(u) for u in (2, 3)})


# Send one packet at slot 0 on each tree and print the AoI trajectory. The AoI
# of a destination drops to the packet's age (its hop count) on arrival.

# In[3]:

for name, t in (("T4", t4), ("T4b", t4b)):
    s = init_state(g, initial_aoi=5)
    inject_tree(s, t, {2, 3})
    rows = []
    for _ in range(4):
        advance_slot(s)
        rows.append(s.aoi[[2, 3]].copy())
    print(name, np.array(rows).tolist(),
          "arrivals at", {u: predicted_arrival(t, u, 0) for u in (2, 3)})


# Periodic multicast: T4 every slot versus T4b every second slot over 20 slots.

# In[4]:

def periodic(tree, every, slots=20):
    s = init_state(g, initial_aoi=1)
    for k in range(slots):
        if k % every == 0:
            inject_tree(s, tree, {2, 3})
        advance_slot(s)
    w = g.weights
    return avg_weighted_aoi(s.trace, w), weighted_peak_age(s.trace, w), avg_energy(s.trace)

for label, args in (("T4 every slot", (t4, 1)), ("T4b every 2nd", (t4b, 2)), ("T4 every 3rd", (t4, 3))):
    aoi, peak, energy = periodic(*args)
    print(f"{label:14s} aoi={aoi:.3f} peak={peak:.3f} energy={energy:.2f}")


# # The per-slot tree problem
#
# Given ages (10, 5) at the destinations and a price of 0.1 per unit energy,
# the exhaustive oracle finds which tree trades AoI gain against cost best.

# In[5]:

from aoi_lab.tree_mdp import TreeEpisodeContext, brute_force_best_tree

for lam in (0.1, 1.0, 1e6):
    ctx = TreeEpisodeContext.for_graph(g, [2, 3], [0, 0, 10.0, 5.0], lam, 3.0, h_hat=2)
    tree, val = brute_force_best_tree(g, ctx)
    print(f"lambda={lam:g}: edges={sorted(tree.edges)} energy={tree.energy} objective={val:.3f}")
