"""
What a packet sees
==================

Each queued packet scores every candidate next hop (including its current
holder) with one 63-value row: TTL, the holder's own node features, min/max/
mean of those features over its neighbors, and the candidate's features plus
two flags. This script prints one such block after a short warm-up.
"""

import numpy as np

from dtnrl import DEFAULT_SCHEMA, SimConfig
from dtnrl.baselines import UtilityPolicy
from dtnrl.sim import World, run

cfg = SimConfig(tx_range=80.0, duration=600, cooldown=100, rng_seed=2)
world = World(cfg)
run(world, UtilityPolicy(), steps=300)

ctx = world.feature_context()
holder = int(np.argmax(world.adj.sum(axis=1)))  # the best-connected node
dst = (holder + 7) % cfg.node_count
rows, cands = ctx.candidate_rows(holder, dst, cfg.initial_ttl, {holder})
print(f"node {holder} holds a packet for {dst}; candidates {cands.tolist()}")

names = DEFAULT_SCHEMA.names
picked = ["ttl", "v.node_degree", "v.transitive_timer", "nbr_min.transitive_timer",
          "u.transitive_timer", "u.euclid_dist", "u.aoi", "u.visited", "u.transmit"]
idx = [names.index(n) for n in picked]
print(" " * 6 + "".join(f"{names[i]:>26}" for i in idx))
for u, row in zip(cands, rows):
    print(f"{int(u):>5} " + "".join(f"{row[i]:>26.4f}" for i in idx))
