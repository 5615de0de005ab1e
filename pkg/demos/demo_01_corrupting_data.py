"""
Corrupting an offline dataset
=============================

Generate a replay-style dataset on the point-mass task, then perturb 30% of
the observations with uniform noise scaled by the per-dimension std, and
compare against a sign-gradient attack on a Q network.
"""

# %%
import numpy as np

from samrl import POINT_MASS, CorruptionConfig, corrupt, generate_dataset, harness

ds = generate_dataset(POINT_MASS, "replay_mix", 2000, seed=0)
print(len(ds), "transitions; std(S) =", np.round(ds.stats.std_s, 3))

# %%
# Random observation noise: exactly round(0.3 * N) rows change, each by at most std(S).
noisy, masks = corrupt(ds, CorruptionConfig(rate=0.3, seed=1))
idx = masks["observation"]
delta = (noisy.s - ds.s)[idx] / ds.stats.std_s
print(len(idx), "rows perturbed; lambda range", delta.min().round(3), delta.max().round(3))

# %%
# The mixture variant draws a separate subset for observations, actions and rewards.
mixed, mmasks = corrupt(ds, CorruptionConfig(rate=0.3, elements="mixture", seed=1))
overlap = len(np.intersect1d(mmasks["observation"], mmasks["action"]))
print(f"observation/action overlap: {overlap} (independent draws give about {0.3 * 0.3 * len(ds):.0f})")

# %%
# Adversarial mode needs an attacker: a briefly trained Q ensemble on the clean data.
cfg = harness.ExperimentConfig.from_mapping({"train.steps": "200", "train.hidden": "32,32"})
attacker = harness.pretrain_attacker(ds, cfg, seed=0)
adv, amasks = corrupt(ds, CorruptionConfig(mode="adversarial", rate=0.3, seed=1), attacker)
from samrl.corruption import pretrained_q

q = pretrained_q(attacker.q_spec, attacker.q_nets)
i = amasks["observation"]
drop = q(ds.s[i], ds.a[i])[0] - q(adv.s[i], ds.a[i])[0]
print(f"mean Q drop on attacked rows {drop.mean():.3f}; never negative: {bool((drop >= 0).all())}")
