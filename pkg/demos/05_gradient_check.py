"""Finite-difference verification of every hand-written backward pass.

The whole training loss (prediction + ranking) runs on a tiny float64 model
with frozen reparameterization noise; each parameter entry is perturbed
centrally and compared against the analytic gradient.

Run: python3 demos/05_gradient_check.py
"""

import time

from skewrec import training

start = time.time()
report = training.grad_check()
elapsed = time.time() - start

print(f"{'parameter group':<18} {'max rel err':>12}")
for group, err in sorted(report["groups"].items()):
    print(f"{group:<18} {err:>12.3e}")
print(f"\nworst tensor: {report['worst_tensor']} ({report['max_rel_err']:.3e})")
print(f"tolerance {report['tolerance']:.0e}, passed: {report['passed']}, "
      f"{elapsed:.1f} s")

# The harness must also notice when a gradient is wrong.
bad = training.grad_check(corrupt="block0.h0.wq_loc")
print(f"\nwith a deliberately corrupted tensor: passed={bad['passed']} "
      f"(worst: {bad['worst_tensor']})")
