"""Sweep one market parameter at a time and watch the liquidity rate.

The liquidity rate is the time-varying coefficient with which a bank
closes the gap to its own group average under the closed-loop rule.
Three one-dimensional sweeps probe how it responds to market structure:

* lambda2: the mixing weight of the second group, i.e. how much small
  banks target the global average rather than their own group,
* horizon: the terminal time T, to show the rate is essentially
  stationary away from the horizon,
* n_total: the number of banks at fixed group proportions.

sweep_claim evaluates the qualitative behavior expected of each axis
(monotone rate(0) for lambda2 and N, a front plateau for the horizon)
and reports whether it holds on the sweep that was actually run.  On
this market the lambda2 direction comes out decreasing, so that claim
is reported as failing; the numbers below show the actual curve.
"""

from interbank import SweepAxis, sweep_claim, sweep_liquidity, two_groups

market = two_groups(n1=4, n2=16)


def show(result):
    desc, ok = sweep_claim(result)
    print(f"axis {result.axis.value}: {desc} -> {'holds' if ok else 'FAILS'}")
    for v, r0 in zip(result.values, result.rate0):
        print(f"    {result.axis.value} = {v:>6g}   rate(0) = {r0:.7f}")


# Mixing weight of the second group.  rate(0) moves by parts in 1e-4:
# the first group's lending intensity barely registers the change, and
# it drifts down, not up.
show(sweep_liquidity(market, SweepAxis.LAMBDA2, (0.1, 0.3, 0.5, 0.7, 0.9)))

# Horizon.  The rate curves plateau at the start and only roll off near
# T.  At T=1 the roll-off still reaches into the front half, so the
# plateau claim needs the longer horizons; rate(0) itself converges to
# its stationary value by T=5.
show(sweep_liquidity(market, SweepAxis.HORIZON, (5.0, 10.0), n_steps=2000))

# Population size at fixed 20/80 proportions.  More banks mean each one
# leans harder on the average, and rate(0) grows toward its large-N
# limit.
show(sweep_liquidity(market, SweepAxis.N_TOTAL, (10, 50, 100, 500)))
