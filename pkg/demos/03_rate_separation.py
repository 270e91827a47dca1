"""
Without the range condition the rate drops
==========================================

The same kernel and penalty, but with a rough dual element: A* p_dagger is
still a subgradient of the penalty at u_dagger, while f p_dagger is far
from the range of A.  Only the first-order rate survives.
"""

from klreg.analysis import geometric, sweep_alpha, vsc_probe, vsc_singular_profile
from klreg.scenarios import preset

alphas = geometric(1e-3, 3e-2, 12)
fast = preset("sc3_kl")
slow = preset("sc1_only")

c = slow.certificates
print(f"SC1-only: range residual {c['range_residual']:.3f}, "
      f"orthogonal part {c['range_orthogonal_norm']:.3f}")

rf = sweep_alpha(fast, alphas)
rs = sweep_alpha(slow, alphas)
print(f"{'alpha':>10s} {'SC3 d_r':>12s} {'SC1-only d_r':>13s}")
for a, b in zip(rf.records, rs.records):
    print(f"{a.alpha:10.3e} {a.d_r:12.5e} {b.d_r:13.5e}")
print(f"slopes: {rf.slope:.3f} with the range condition, {rs.slope:.3f} without")

# the variational form of the condition: the constant c in
#   int f p (p - q) <= c sqrt(D_{R*}(A*q, A*p))
# should not depend on the probe scale when the range condition holds
for name in ("sc3_quadratic", "sc1_only"):
    rep = vsc_probe(preset(name))
    cs = ", ".join(f"{c:.3g}" for c in rep["min_c"].values())
    print(f"{name:14s} min c over eps 1e-3, 1e-2, 1e-1: {cs}  (spread {rep['spread']:.2f})")

# random directions cannot tell the two apart: for a quadratic R* the ratio
# is the same at every eps.  Along singular directions of A it can.
for name in ("sc3_quadratic", "sc1_only"):
    prof = vsc_singular_profile(preset(name))
    print(f"{name:14s} ratio along singular directions 0, 8, 16, {len(prof) - 1}: "
          + ", ".join(f"{prof[k]:.3g}" for k in (0, 8, 16, len(prof) - 1)))
