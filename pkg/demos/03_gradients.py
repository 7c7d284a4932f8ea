"""Every backward rule against central finite differences, then a deliberately broken one.

The second pass scales the backward rule of ``matmul`` by 1.5; every
check that touches a matrix product must now fail, which shows the
checks can actually detect a wrong gradient.
"""

from gcnsa.gradcheck import broken_backward, run_checks

results = run_checks()
for r in results:
    print(r.line())
print(f"{sum(r.passed for r in results)}/{len(results)} passed\n")

with broken_backward("matmul"):
    broken = run_checks(["matmul", "mhsa", "model_full", "gcn", "relu"])
for r in broken:
    print(r.line())
