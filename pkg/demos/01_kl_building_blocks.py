"""
KL fidelity building blocks
===========================

The KL fidelity, its conjugate, its prox, and the Bregman distance that
measures reconstruction error.  Everything lives on a quadrature grid, so
integrals are weighted sums.
"""

import numpy as np

from klreg.bregman import bregman, symmetric_bregman
from klreg.functionals import boltzmann_shannon, kl_fidelity, kl_penalty
from klreg.grid import make_uniform_grid
from klreg.oracle import conjugate_oracle, prox_oracle

g = make_uniform_grid(0.0, 1.0, 8)
f = g.function(2.0)
H = kl_fidelity(f)

# H_f vanishes at the data and is infinite off the positive cone
print("H_f(f)           =", H(f))
print("H_f(1)           =", H(np.ones(8)), " (= 2 ln 2 - 1)")
print("H_f(-1)          =", H(-np.ones(8)))

# conjugate -int f ln(1 - s), finite only for s < 1
print("H_f*(1/2)        =", H.conj(np.full(8, 0.5)), " oracle:",
      conjugate_oracle(lambda t: 2 * np.log(2 / t) - 2 + t if t > 0 else np.inf, 0.5, (1e-8, 1e3)))

# prox in closed form against the brute-force scan
z, tau = 0.0, 1.0
print("prox(0; 1)       =", H.prox(np.full(8, z), tau)[0], " oracle:",
      prox_oracle(lambda t: 2 * np.log(2 / t) - 2 + t if t > 0 else np.inf, z, tau, (1e-8, 10)))

# the KL divergence is the Bregman distance of the Boltzmann-Shannon entropy
B = boltzmann_shannon(g)
u, v = np.ones(8), np.full(8, np.e)
print("D_B(1, e)        =", bregman(B, u, v, np.log(v) + 1), " KL(1, e) =",
      kl_fidelity(g.function(u))(v))

# symmetric distance of an entropy penalty
R = kl_penalty(g.function(1.0))
a, b = np.full(8, 0.5), np.full(8, 1.5)
print("D^s_R(0.5, 1.5)  =", symmetric_bregman(R, a, b, R.subgrad(a), R.subgrad(b)),
      " (= ln 3)")
