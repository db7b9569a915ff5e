"""
One fixed point, many starting points
=====================================

The information iteration has a unique positive definite fixed point, so
where you start from should not matter.  We draw one random loopy
instance and run it from three very different initial states: zero
information, 5 times identity, and a random PSD state (including some
singular and zero blocks).  The final stacked information matrices agree
to near machine precision, and every iterate after the first sits inside
the cone interval [L, U].
"""

import numpy as np

from gabp import analysis, engine, network

net = network.generate_random(seed=42, num_nodes=6, topology="er", er_prob=0.5)
op = analysis.build_stacked(net)
bounds = analysis.bounds_ul(op)
print(f"instance: {net.num_nodes} nodes, {len(net.edges)} network edges, "
      f"{len(op.edge_order)} directed factor-graph edges")

rng = np.random.default_rng(7)
blocks = analysis.random_state_blocks(rng, op.block_dims)
random_init = engine.MessageState(0, {
    e: engine.EdgeMessage(e, b, np.zeros(b.shape[0]))
    for e, b in zip(op.edge_order, blocks)
})

configs = {
    "zero": engine.ScheduleConfig(tol_frobenius=1e-13),
    "5*identity": engine.ScheduleConfig(tol_frobenius=1e-13,
                                        init="identity", init_scale=5.0),
    "random PSD": engine.ScheduleConfig(tol_frobenius=1e-13, init=random_init),
}

finals = {}
for name, cfg in configs.items():
    res = engine.run(net, cfg)
    finals[name] = res.state.stacked()
    analysis.annotate_trace(res.trace, bounds, res.state.info_blocks())
    inside = [r.in_bounds for r in res.trace.records if r.in_bounds is not None]
    print(f"  init={name:12s} converged in {res.iterations:3d} iterations, "
          f"L <= C(l) <= U at all {len(inside)} checked iterations: {all(inside)}")

base = finals["zero"]
for name in ("5*identity", "random PSD"):
    gap = np.linalg.norm(finals[name] - base, "fro")
    print(f"  |C_final({name}) - C_final(zero)|_F = {gap:.2e}")

print("\nthe info trajectory does not depend on the observations either:")
shifted = net.with_obs({i: net.node(i).obs + 1.0 for i in net.ids})
budget = engine.ScheduleConfig(max_iterations=20, tol_frobenius=1e-15)
r1 = engine.run(net, budget)
r2 = engine.run(shifted, budget)
same = all(np.array_equal(a, b)
           for s1, s2 in zip(r1.trace.info_blocks, r2.trace.info_blocks)
           for a, b in zip(s1, s2))
print(f"  all 20 iterations bitwise identical after shifting every y by 1: "
      f"{same}")
print(f"  belief means moved: "
      f"{not np.allclose(r1.beliefs[1].mean, r2.beliefs[1].mean)}")
