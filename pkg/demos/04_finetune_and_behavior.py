"""
Fine-tuning on a recorded trace, then reading the decision log
==============================================================

Positions can come from any ``t,node_id,x,y`` CSV (for example one exported
from a vehicular simulator). Here we export a synthetic trace, load it back
as trace-driven mobility, fine-tune a base model for 40 short rounds and
ask how often the model hands packets to fast nodes. A trace carries no speed
classes, so ``speed_mix`` labels its nodes in id order.

Run ``03_continual_training.py`` first to produce ``cl-demo.qnet``; without it
a freshly initialised network is used as the base.
"""

from pathlib import Path

from dtnrl import DRLPolicy, QNetwork, SimConfig, fine_tune
from dtnrl.campaign import analyze_behavior
from dtnrl.cltrain import new_network
from dtnrl.mobility import load_trace
from dtnrl.sim import World, collect_metrics, make_trajectory, run

MIX = (("slow", 12), ("fast", 13))
source = SimConfig(tx_range=20.0, duration=2500, cooldown=500, rng_seed=5).replace(speed_mix=MIX)
make_trajectory(source).to_csv("mix-trace.csv")
trace = load_trace("mix-trace.csv")
print(f"trace: {trace.n_nodes} nodes x {trace.steps} steps")

base = QNetwork.load("cl-demo.qnet") if Path("cl-demo.qnet").exists() else new_network(0)
cfg = source.replace(model="trace", trace_path="mix-trace.csv", buffer_cap=2000,
                     initial_ttl=3000, flow_arrival_rate=0.004)
tuned = fine_tune(base, cfg, budget=2000, round_len=50, trajectory=trace)

for name, net in (("base", base), ("fine-tuned", tuned)):
    world = World(cfg, trace, log_decisions=True)
    run(world, DRLPolicy(net))
    m = collect_metrics(world, name, strict=False)
    fast = analyze_behavior(world.decision_log)["fast"]
    print(f"{name:>10}: delay {m.mean_delay:6.1f} s over {m.delivered} packets; "
          f"P(fast)={fast['p'] if isinstance(fast['p'], str) else round(fast['p'], 3)} "
          f"vs uniform {fast['uniform'] if isinstance(fast['uniform'], str) else round(fast['uniform'], 3)}")
