"""Variational regularization with Kullback-Leibler type fidelities.

A small numerical laboratory for problems ``min_u (1/alpha) H_f(Au) + R(u)``
on discretized Fredholm operators, their Fenchel duals, and the Bregman
distance error estimates that hold under range-type source conditions.
"""

from .grid import Grid, GridFunction, make_uniform_grid, inner_product, norm
from .operators import DiscreteOperator, fredholm_from_kernel, apply, adjoint_apply

__version__ = "0.1.0"
