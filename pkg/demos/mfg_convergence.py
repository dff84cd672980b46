"""Mean-field limit of the finite game, with its structural checks.

As the number of banks grows at fixed group proportions, the finite
closed-loop and open-loop feedback rules converge to the mean-field
rule, whose coefficients solve a smaller system that never sees the
bank counts.  This script

* solves the mean-field system for markets with 1 to 3 groups and
  checks the conservation property of the mean-coupling matrix (its
  rows sum to zero, so the vector of group means is driven only by
  relative gaps),
* climbs an N ladder and measures the sup-norm gap between the finite
  rules and the mean-field rule, which decays like 1/N,
* compares finite-N open-loop coefficients against their large-N
  limits, and
* evaluates the structural bounds on the limiting cross coefficients
  (positivity and an exponential-decay envelope).
"""

import numpy as np

from interbank import (
    GroupParams,
    MarketParams,
    TimeGrid,
    check_mfg_row_sums,
    check_prop1_bounds,
    check_sum_identity,
    convergence_to_mfg,
    open_vs_limiting,
    solve_limiting,
    solve_mfg,
    two_groups,
)

grid = TimeGrid(t_end=1.0, n_steps=400)

# Mean-field solves for one to three groups.  Group weights come from
# the bank counts; the coupling matrix psim has one row per group.
rng = np.random.default_rng(3)
for d in (1, 2, 3):
    groups = tuple(
        GroupParams(sigma=1.0, q=float(q), eps=float(q) ** 2 + 1.0, c=0.5,
                    lam=float(lam), n_banks=8)
        for q, lam in zip(rng.uniform(1.0, 3.0, d), rng.uniform(0.1, 0.9, d)))
    mkt = MarketParams(groups=groups, rho=0.0, horizon=1.0)
    path = solve_mfg(mkt, grid)
    print(f"d = {d}: worst |row sum of psim| = {check_mfg_row_sums(path):.2e}")

# Finite-N rules against the mean-field rule on the standard two-group
# market.  The gaps shrink by 10x per decade of N: slope -1 in log-log.
market = two_groups(n1=4, n2=16)
report = convergence_to_mfg(market, (100, 1_000, 10_000), grid=grid)
print("N ladder:", report.n_values)
print("closed-loop gaps:",
      ", ".join(f"{g:.3e}" for g in report.closed_gaps),
      f"(slope {report.closed_slope:+.3f})")
print("open-loop gaps:  ",
      ", ".join(f"{g:.3e}" for g in report.open_gaps),
      f"(slope {report.open_slope:+.3f})")

# Open-loop coefficients at N = 1e6 against the limiting system.
gaps = open_vs_limiting(market, 1_000_000, grid=grid)
worst = max(gaps, key=gaps.get)
print(f"open vs limiting at N = 1e6: worst pair {worst} "
      f"with gap {gaps[worst]:.2e}")

# Structural facts about the limiting system: the two cross-coefficient
# sums vanish identically, and each cross coefficient stays positive
# under an exponential envelope.  Nonzero terminal costs c make the
# envelope bind; with c = 0 the checked coefficients are identically 0.
costly = two_groups(n1=4, n2=16, c=(0.5, 0.8))
limiting = solve_limiting(costly, grid)
eta_sum, phi_sum = check_sum_identity(limiting)
print(f"limiting sum identity: |etahat4+etahat5| <= {eta_sum:.2e}, "
      f"|phihat4+phihat5| <= {phi_sum:.2e}")
print(f"positivity/envelope slack: {check_prop1_bounds(limiting, costly):+.2e}"
      " (negative would be a violation)")
