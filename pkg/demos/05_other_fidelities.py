"""
Other fidelities: Itakura-Saito and the quadratic case
======================================================

For a general integrand the range condition reads
p_dagger / phi''(f) = A v_dagger; for Itakura-Saito phi''(f) = 1/f^2.
In the quadratic (q = 2) case the reference value is a strict upper
bound for the error, with no remainder.
"""

import numpy as np

from klreg.analysis import geometric, sweep_alpha
from klreg.functionals import check_integrand_conditions, itakura_saito_spec
from klreg.scenarios import preset

alphas = geometric(1e-3, 3e-2, 12)

scn = preset("is_sc4")
rep = check_integrand_conditions(itakura_saito_spec(np.inf), scn.f.values)
print(f"Itakura-Saito conditions at f: phi'(f) max {np.abs(rep.d1_at_f).max():.1e}, "
      f"ctilde max {rep.ctilde_max:.3f}, passed {rep.passed}")
r = sweep_alpha(scn, alphas)
print(f"Itakura-Saito slope {r.slope:.4f}")

scn = preset("scaling_q2")
r = sweep_alpha(scn, alphas)
worst = max(x.d_r - x.d_r_ref for x in r.records)
print(f"quadratic slope {r.slope:.4f}, max d_r - d_r_ref = {worst:.2e}")
