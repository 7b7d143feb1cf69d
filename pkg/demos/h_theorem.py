"""Relative entropy and its dissipation along the spectral Maxwell-molecule flow."""
from kacchaos import entropy, limit
from kacchaos.model import CollisionKernel

kernel = CollisionKernel.gmm()
coeffs = [1.0, 0.0, 1.0]  # (1 + x^2) times a Gaussian along one axis
E = limit.polynomial_gaussian_energy(coeffs)
F0 = limit.fourier_initial(limit.polynomial_gaussian_transform(coeffs), 4, E, 64)
gamma = limit.Maxwellian(E, 3)

traj = limit.evolve_fourier(F0, kernel, 4.0, 0.05, every=10, n_theta=32)
print(" time      H(f|M)       D(f)")
for F in traj:
    f = F.to_velocity()
    D = entropy.entropy_production(f, kernel, 20_000)
    print(f"{F.time:5.2f}  {entropy.relative_entropy(f, gamma):.3e}  {D.value:.3e}")
