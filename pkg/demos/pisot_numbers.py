"""Nearest-integer approximations of alpha * lambda^n.

For a Pisot number the distances to the integers decay geometrically; for
other reals they do not.  The two-step prediction used in the covering
argument is shown on a constructed instance.

    python demos/pisot_numbers.py
"""
import numpy as np

from rauzy_spectra.dioph import constructed_instances, ek_predict, salem_demo

for lam in ["(1+sqrt(5))/2", "1+sqrt(2)", "2", "3/2"]:
    r = salem_demo(lam, 1, 30)
    eps = np.abs(r.eps)
    print(f"lambda = {lam:14s} |eps_n| for n = 5, 10, 20, 30: "
          + "  ".join(f"{eps[n]:.2e}" for n in (5, 10, 20, 30)))

phi = salem_demo("(1+sqrt(5))/2", 1, 30)
print("\nfor the golden mean K_n are Lucas numbers:", phi.K[:12])
print(f"and |eps_30| * phi^30 = {abs(float(phi.eps[30])) * ((1 + 5 ** 0.5) / 2) ** 30:.12f}")

inst = constructed_instances(0, 1)[0]
pred, branches = ek_predict(inst, 0)
print(f"\ntwo-step prediction: K = {inst.K[:2]} -> predicted {pred}, actual {inst.K[2]}, "
      f"{branches} branches allowed without the smallness hypothesis")
