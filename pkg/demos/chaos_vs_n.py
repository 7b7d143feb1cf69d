"""How far the one-particle marginal of a Kac system sits from the limit
equation, for growing N.

The reference is a large particle system (64k particles) started from the
same law. A narrow two-temperature start makes the finite-N error easy to see.
"""
import numpy as np

from kacchaos import chaos, kac, limit
from kacchaos.model import CollisionKernel
from kacchaos.sampling import density, sample_sphere_conditioned

kernel = CollisionKernel.gmm()
f0 = density("two_temperature", p=0.96875, s1=0.001, s2=1.0).scaled_to_energy(3.0)
times = [0.0, 0.5, 1.0]

oracle = limit.dsmc_limit_oracle(f0, kernel, None, 1.0, times, 65536, 1, seed=7)

print("   N   " + "  ".join(f"t={t:<4}" for t in times))
for N in (16, 32, 64):
    ens = kac.run_ensemble(lambda rng: sample_sphere_conditioned(f0, N, 3.0, rng),
                           kernel, 1.0, times, 200, master_seed=1)
    series = chaos.chaos_series(ens, oracle, augment=True, bootstrap=0, seed=1)
    print(f"{N:4d}  " + "  ".join(f"{v:.4f}" for v in series.values))
