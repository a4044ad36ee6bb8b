"""Solve one catalog problem and print a readable report.

Usage: python3 demos/solve_and_report.py [problem] [n_T] [n_paths]
Defaults: small_quadratic 32 20000
"""

import sys
import time
import warnings

from absde_lab import (
    NumericsSpec,
    applicability_report,
    builtin_problem,
    estimate_terminal_norms,
    reference_y0,
    solve,
    z2_norm_estimate,
)

name = sys.argv[1] if len(sys.argv) > 1 else "small_quadratic"
n_T = int(sys.argv[2]) if len(sys.argv) > 2 else 32
n_paths = int(sys.argv[3]) if len(sys.argv) > 3 else 20000

problem = builtin_problem(name)
numerics = NumericsSpec(n_T=n_T, n_paths=n_paths, seed=0)

print(f"problem: {name}   T={problem.T}  K={problem.K}  n_T={n_T}  paths={n_paths}")

report = applicability_report(problem, estimate_terminal_norms(problem))
for regime in ("small-terminal", "local-window", "barrier-stitch", "transform"):
    entry = report[regime]
    line = f"  {regime:<15} {entry['verdict']}"
    if entry["verdict"] == "fails":
        line += f"  ({entry['reason']})"
    print(line)
print(f"  suggested strategy: {report['suggested_strategy']}")

t0 = time.perf_counter()
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    result = solve(problem, numerics)
elapsed = time.perf_counter() - t0

md = result.solution.metadata
print(f"\nstrategy used: {result.strategy}  ({elapsed:.1f}s)")
print(f"Y0 = {md['y0_mean']:.6f} +- {md['y0_stderr']:.2e}")
ref = reference_y0(name)
if ref is not None:
    print(f"closed form    {ref:.6f}   abs error {abs(md['y0_mean'] - ref):.2e}")
print(f"outer iterations: {result.outer_iterations}")
print(f"certified: {result.certified}")
for w in caught:
    print(f"  note: {w.message}")

norms = z2_norm_estimate(result.solution)
print(f"sup |Y| = {norms.y_sup:.4f}   sup_t E_t[remaining |Z|^2] = {norms.z_z2:.4f}")
if "contraction" in result.diagnostics:
    con = result.diagnostics["contraction"]
    print(f"outer decay geometric: {con['geometric']}   fitted rate {con['fitted_rate']:.3g}")
