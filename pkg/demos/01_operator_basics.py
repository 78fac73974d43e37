# The discrete fractional operator: constants, exterior tail, energy and the
# Fourier picture on the torus.
import math

import numpy as np

from fraclap.fracop import (GagliardoKernel, PeriodicKernel, c_ds, c_ds_closed_form, dirichlet_apply,
                            exterior_tail, gagliardo_energy, spectral_energy)
from fraclap.grid import GridSpec, ScalarField, centered_box, disk

# normalisation constant by quadrature, next to the Gamma-function formula
for d, s in [(1, 0.5), (2, 0.25), (2, 0.49), (2, 0.75)]:
    c = c_ds(d, s)
    print(f"C({d},{s}) = {c.value:.12f}  closed form {c_ds_closed_form(d, s):.12f}")
print("1/pi =", 1 / math.pi)

# bounded grid: 64^2 box, Omega a disk; the exterior tail blows up at the rim
g = GridSpec.bounded(disk(64, 26))
phi = exterior_tail(g, 0.3).values
print("tail at centre %.3f, next to the rim %.3f" % (phi[32, 32], phi[32, 7]))

# energy of a bump vs a rough field
x, y = g.centers()
bump = ScalarField(g, np.exp(-40 * ((x - 0.5) ** 2 + (y - 0.5) ** 2)))
rough = ScalarField(g, np.random.default_rng(0).standard_normal(g.shape))
k = GagliardoKernel(g, 0.3)
print("E(bump) = %.4g, E(noise) = %.4g" % (gagliardo_energy(bump, k), gagliardo_energy(rough, k)))

# <u, v>_{H^s} = 2 sum (L_h u) v h^d
Lu = dirichlet_apply(bump, k).values
print("2<L u, u> h^d = %.6g" % (2 * np.sum(Lu * bump.masked()) * g.cell_volume))

# torus: lattice-sum energy against the spectral formula, halving with h
for n in (32, 64, 128):
    gp = GridSpec.periodic(2, n)
    x, y = gp.centers()
    u = ScalarField(gp, np.sin(2 * np.pi * x) + 0.5 * np.cos(2 * np.pi * y))
    e = gagliardo_energy(u, PeriodicKernel(gp, 0.25))
    print(f"n={n:4d}  lattice {e:.6f}  spectral {spectral_energy(u, 0.25):.6f}  "
          f"rel gap {abs(e / spectral_energy(u, 0.25) - 1):.2e}")

# the padded-box Omega used for fractional perimeters
print("box Omega cells:", GridSpec.bounded(centered_box(32, 24)).omega.sum())
