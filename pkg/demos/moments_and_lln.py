# Two quick checks with closed-form answers.
import math

from kacchaos import limit
from kacchaos.chaos import lln_rate_experiment
from kacchaos.model import CollisionKernel
from kacchaos.sampling import chaos_baseline, density

# traceless second moments relax at one fixed rate for Maxwell molecules
co = limit.moment_ode_coefficients(CollisionKernel.gmm(), 4)
print("traceless relaxation rate", -co.traceless_rate(), "vs pi", math.pi)

# the squared H^-1 distance between a Gaussian sample and its law has mean 2 sqrt(pi) / N
est = chaos_baseline(density("trunc_gauss", 1), 100, 2000, "hdot", master_seed=4)
print(f"E|mu^N - f0|^2 = {est.value:.5f} +- {est.stderr:.5f}, exact {2 * math.sqrt(math.pi) / 100:.5f}")

res = lln_rate_experiment(density("uniform_ball", 1), "w1", (100, 1000, 10000), 200, seed=5)
print("W1 slope in N:", round(res.slope, 3))
