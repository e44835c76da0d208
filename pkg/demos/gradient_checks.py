"""Run the finite-difference gradient suite and print its report.

Every differentiable primitive is checked coordinate-by-coordinate
against central differences at float64, then the composed pipeline
(encoder -> pyramid -> regressor -> head -> matching loss) is swept one
stage at a time.

Run:  python3 demos/gradient_checks.py
"""

import time

from nestor.gradcheck import run_suite

started = time.perf_counter()
results = run_suite()
for r in results:
    print(r.line())
elapsed = time.perf_counter() - started
failures = sum(not r.passed for r in results)
print(f"\n{len(results)} checks, {failures} failures, {elapsed:.1f}s")
