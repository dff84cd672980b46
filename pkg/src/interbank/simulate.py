"""Three-layer noise generation and Euler-Maruyama simulation.

Each bank's diffusion mixes one global driver W0, one per-group driver Wk,
and one idiosyncratic driver, with loadings (rho, sqrt(1-rho^2)*rho_k,
sqrt(1-rho^2)*sqrt(1-rho_k^2)) that square-sum to one.

Randomness is keyed per path: path p draws its entire normal block from
its own generator seeded with (seed, p), so any partition of paths into
batches or threads reproduces the same numbers.  Reductions over paths
are integer counts or fixed-order array writes, making every result
byte-identical between serial and parallel runs.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .equilibrium import FeedbackStrategy, feedback_closed, feedback_mfg
from .model import (
    MarketParams,
    Mode,
    TimeGrid,
    ValidatedMarket,
    noise_loadings,
    validate,
)
from .riccati import BLOWUP_LIMIT, CoefficientPath, solve_closed_loop, solve_mfg

# Fixed number of paths per work unit.  Batch boundaries depend only on
# this constant, never on the worker count, so parallel schedules cannot
# reorder any floating-point reduction.
BATCH_PATHS = 512

_UNIT_NORM_TOL = 1e-14
_MAX_SEED = 2**64


class SimulationBlowUp(RuntimeError):
    """A simulated state left [-BLOWUP_LIMIT, BLOWUP_LIMIT]."""

    def __init__(self, t: float):
        super().__init__(f"simulated state blew up near t={t:g}")
        self.t = t


@dataclass(frozen=True)
class NoiseSpec:
    """Correlation loadings plus the reproducibility contract (seed, n_paths)."""

    rho: float
    rho_k: tuple[float, ...]
    seed: int
    n_paths: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho_k", tuple(float(r) for r in self.rho_k))
        if not 0 <= self.seed < _MAX_SEED:
            raise ValueError("seed must fit in 64 bits")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        for r in (self.rho, *self.rho_k):
            if not -1.0 <= r <= 1.0:
                raise ValueError("correlation loadings must lie in [-1, 1]")
        for rk in self.rho_k:
            c0, cg, ci = noise_loadings(self.rho, rk)
            if abs(c0 * c0 + cg * cg + ci * ci - 1.0) >= _UNIT_NORM_TOL:
                raise ValueError("noise loadings do not square-sum to one")

    @classmethod
    def from_market(cls, market: MarketParams | ValidatedMarket, seed: int,
                    n_paths: int) -> "NoiseSpec":
        groups = market.groups
        return cls(rho=market.rho, rho_k=tuple(g.rho_k for g in groups),
                   seed=seed, n_paths=n_paths)

    @property
    def d(self) -> int:
        return len(self.rho_k)


@dataclass(frozen=True)
class IncrementBatch:
    """Normal draws for a contiguous block of paths.

    ``drivers[:, n, 0]`` is the global increment at step n, columns 1..d
    the group increments, all scaled by sqrt(dt); ``idiosyncratic`` holds
    one sqrt(dt)-scaled column per bank.  ``x0_normals`` are unscaled
    standard normals reserved for initial-state sampling; they are drawn
    first so the stream layout never depends on whether X0 is random.
    """

    start: int
    x0_normals: np.ndarray
    drivers: np.ndarray
    idiosyncratic: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.drivers.shape[0]


def _active_driver_columns(spec: NoiseSpec) -> tuple[int, ...]:
    """Driver indices (0 global, k for group k) with a nonzero loading."""
    active = []
    if spec.rho != 0.0:
        active.append(0)
    if abs(spec.rho) < 1.0:
        active.extend(1 + k for k, r in enumerate(spec.rho_k) if r != 0.0)
    return tuple(active)


def generate_increments(spec: NoiseSpec, grid: TimeGrid,
                        n_banks_per_group: Sequence[int],
                        batch_paths: int = BATCH_PATHS, *,
                        reuse_buffers: bool = False,
                        ) -> Iterator[IncrementBatch]:
    """Yield per-path driver and idiosyncratic increments in fixed batches.

    Path p's block is drawn from a PCG64 generator seeded
    SeedSequence((seed, p)): x0 normals first, then step-major rows (the
    active drivers in index order, one column per bank).  A driver whose
    loading vanishes for every group (rho == 0 for the global one,
    sqrt(1-rho^2)*rho_k == 0 for group k) can never reach a bank, so its
    column draws no randomness and stays zero; fully independent markets
    pay for exactly one normal per bank per step.  The layout depends
    only on (spec, grid, n_banks_per_group), so simulations of the group
    means alone reuse the identical driver columns.

    With ``reuse_buffers`` every yielded batch is a view into one arena
    that the next iteration overwrites; enable it only when each batch is
    fully consumed before the generator advances.
    """
    sizes = tuple(int(n) for n in n_banks_per_group)
    if len(sizes) != spec.d:
        raise ValueError("one bank count per group is required")
    d = spec.d
    n_banks = sum(sizes)
    n_steps = grid.n_steps
    active = _active_driver_columns(spec)
    n_active = len(active)
    width = n_active + n_banks
    root = math.sqrt(grid.dt)
    x0_arena = block_arena = None
    for start in range(0, spec.n_paths, batch_paths):
        count = min(batch_paths, spec.n_paths - start)
        if not reuse_buffers:
            x0 = np.empty((count, n_banks))
            block = np.empty((count, n_steps, width))
        else:
            if x0_arena is None:
                x0_arena = np.empty((count, n_banks))
                block_arena = np.empty((count, n_steps, width))
            x0 = x0_arena[:count]
            block = block_arena[:count]
        for j in range(count):
            seq = np.random.SeedSequence(entropy=(spec.seed, start + j))
            rng = np.random.Generator(np.random.PCG64(seq))
            rng.standard_normal(out=x0[j])
            rng.standard_normal(out=block[j])
            block[j] *= root
        if n_active == 1 + d:
            drivers = block[:, :, : 1 + d]
        else:
            drivers = np.zeros((count, n_steps, 1 + d))
            if n_active:
                drivers[:, :, list(active)] = block[:, :, :n_active]
        yield IncrementBatch(
            start=start,
            x0_normals=x0,
            drivers=drivers,
            idiosyncratic=block[:, :, n_active:],
        )


class TargetKind(enum.Enum):
    GLOBAL_AVERAGE = "global"
    GROUP_AVERAGE = "group"
    SINGLE_BANK = "bank"


@dataclass(frozen=True)
class DefaultSpec:
    """Default barrier on a log-capitalization statistic.

    ``level`` is the barrier D <= 0; the target selects which series is
    monitored against it.
    """

    level: float
    kind: TargetKind = TargetKind.GLOBAL_AVERAGE
    group: int | None = None
    bank: int | None = None

    def __post_init__(self) -> None:
        if self.level > 0.0:
            raise ValueError("default level must be <= 0")
        if self.kind is not TargetKind.GLOBAL_AVERAGE and self.group is None:
            raise ValueError(f"{self.kind.value} target needs a group index")
        if self.kind is TargetKind.SINGLE_BANK and self.bank is None:
            raise ValueError("single-bank target needs a bank index")

    @classmethod
    def global_average(cls, level: float) -> "DefaultSpec":
        return cls(level=level)

    @classmethod
    def group_average(cls, level: float, group: int) -> "DefaultSpec":
        return cls(level=level, kind=TargetKind.GROUP_AVERAGE, group=group)

    @classmethod
    def single_bank(cls, level: float, group: int, bank: int) -> "DefaultSpec":
        return cls(level=level, kind=TargetKind.SINGLE_BANK, group=group,
                   bank=bank)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Simulated bank paths plus derived group and global averages."""

    grid: TimeGrid
    states: np.ndarray
    group_index: tuple[int, ...]
    group_averages: np.ndarray
    global_average: np.ndarray
    x0: np.ndarray
    times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "group_index", tuple(self.group_index))
        object.__setattr__(self, "times", self.grid.times())
        n_paths, n_banks, n_nodes = self.states.shape
        d = max(self.group_index) + 1
        if n_nodes != self.grid.n_steps + 1:
            raise ValueError("states do not match the grid")
        if len(self.group_index) != n_banks:
            raise ValueError("need one group index per bank")
        if self.group_averages.shape != (n_paths, d, n_nodes):
            raise ValueError("group_averages shape mismatch")
        if self.global_average.shape != (n_paths, n_nodes):
            raise ValueError("global_average shape mismatch")
        if not np.array_equal(self.states[:, :, 0], self.x0):
            raise ValueError("initial slice does not equal the configured X0")
        proj = _group_projector(self.group_index, d)
        avg = np.einsum("kb,pbn->pkn", proj, self.states)
        if not np.allclose(avg, self.group_averages, rtol=0.0, atol=1e-12):
            raise ValueError("stored group averages disagree with states")
        glob = self.states.mean(axis=1)
        if not np.allclose(glob, self.global_average, rtol=0.0, atol=1e-12):
            raise ValueError("stored global average disagrees with states")

    @classmethod
    def from_states(cls, grid: TimeGrid, states: np.ndarray,
                    group_index: Sequence[int],
                    x0: np.ndarray | None = None) -> "TrajectoryEnsemble":
        group_index = tuple(group_index)
        d = max(group_index) + 1
        proj = _group_projector(group_index, d)
        return cls(
            grid=grid,
            states=states,
            group_index=group_index,
            group_averages=np.einsum("kb,pbn->pkn", proj, states),
            global_average=states.mean(axis=1),
            x0=states[:, :, 0].copy() if x0 is None else x0,
        )

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_banks(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.group_averages.shape[1]

    def target_series(self, default: DefaultSpec) -> np.ndarray:
        """The monitored series, one row per path."""
        if default.kind is TargetKind.GLOBAL_AVERAGE:
            return self.global_average
        if default.kind is TargetKind.GROUP_AVERAGE:
            return self.group_averages[:, default.group, :]
        flat = _flat_bank_index(self.group_index, default.group, default.bank)
        return self.states[:, flat, :]


def _group_projector(group_index: Sequence[int], d: int) -> np.ndarray:
    proj = np.zeros((d, len(group_index)))
    for i, k in enumerate(group_index):
        proj[k, i] = 1.0
    return proj / proj.sum(axis=1, keepdims=True)


def _flat_bank_index(group_index: Sequence[int], group: int, bank: int) -> int:
    members = [i for i, k in enumerate(group_index) if k == group]
    return members[bank]


def _ensure_sim(market: MarketParams | ValidatedMarket) -> ValidatedMarket:
    if isinstance(market, ValidatedMarket):
        vm = market
    else:
        mode = Mode.CLOSED_LOOP if len(market.groups) == 2 else Mode.MFG
        vm = validate(market, mode)
    vm.group_sizes()
    return vm


def _expand_x0(x0, sizes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Per-bank means and standard deviations of the initial states.

    Accepts a scalar, one entry per group, or per-group (mean, std) pairs
    for i.i.d. normal starts; a bare scalar entry means a degenerate start.
    """
    d = len(sizes)
    if np.isscalar(x0):
        per_group = [(float(x0), 0.0)] * d
    else:
        if len(x0) != d:
            raise ValueError(f"x0 needs one entry per group ({d})")
        per_group = [
            (float(e[0]), float(e[1])) if not np.isscalar(e) else (float(e), 0.0)
            for e in x0
        ]
    mean = np.concatenate([np.full(n, m) for n, (m, _) in zip(sizes, per_group)])
    std = np.concatenate([np.full(n, s) for n, (_, s) in zip(sizes, per_group)])
    if (std < 0.0).any():
        raise ValueError("x0 standard deviations must be nonnegative")
    return mean, std


def _strategy_tables(strategy: FeedbackStrategy, grid: TimeGrid
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gap, weight, and intercept coefficients at the left node of each step."""
    if abs(strategy.horizon - grid.t_end) > 1e-9 * max(1.0, grid.t_end):
        raise ValueError("strategy horizon does not match the simulation grid")
    same = strategy.grid.n_steps == grid.n_steps
    steps = grid.n_steps
    if same:
        return (strategy.gap_gain[:steps], strategy.avg_weights[:steps],
                strategy.intercept[:steps])
    times = grid.times()[:steps]
    gap = np.stack([strategy.gap_gain_at(t) for t in times])
    weights = np.stack([strategy.avg_weights_at(t) for t in times])
    inter = np.stack([strategy.intercept_at(t) for t in times])
    return gap, weights, inter


def _bank_layout(vm: ValidatedMarket):
    sizes = vm.group_sizes()
    group_index = np.repeat(np.arange(len(sizes)), sizes)
    sig = np.array([vm.groups[k].sigma for k in group_index])
    loads = np.array([noise_loadings(vm.rho, g.rho_k) for g in vm.groups])
    c0 = loads[group_index, 0]
    cg = loads[group_index, 1]
    ci = loads[group_index, 2]
    return sizes, group_index, sig, (c0, cg, ci)


def _mixed_noise(batch: IncrementBatch, group_index: np.ndarray, sig,
                 loads) -> np.ndarray:
    """Per-bank diffusion increments: the unit-norm mixture of the global,
    group, and idiosyncratic drivers scaled by the group volatility.

    Layers with zero weight are skipped, and an all-ones mixture returns
    the idiosyncratic block itself, so fully independent noise costs no
    copies.
    """
    c0, cg, ci = (sig * c for c in loads)
    out = None
    if c0.any():
        out = c0 * batch.drivers[:, :, :1]
    if cg.any():
        layer = cg * batch.drivers[:, :, 1 + group_index]
        out = layer if out is None else np.add(out, layer, out=out)
    if ci.any():
        if out is None:
            if (ci == 1.0).all():
                return batch.idiosyncratic
            return ci * batch.idiosyncratic
        out += ci * batch.idiosyncratic
    if out is None:
        out = np.zeros_like(batch.idiosyncratic)
    return out


def _run_batches(spec: NoiseSpec, grid: TimeGrid, sizes, worker,
                 jobs: int | None, batch_paths: int = BATCH_PATHS) -> Iterable:
    # Serial runs consume each batch before the next draw, so they can use
    # the overwrite arena; pool.map holds many batches in flight and needs
    # fresh arrays.
    if jobs is None or jobs <= 1:
        batches = generate_increments(spec, grid, sizes, batch_paths,
                                      reuse_buffers=True)
        return [worker(b) for b in batches]
    batches = generate_increments(spec, grid, sizes, batch_paths)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, batches))


def _per_bank_tables(gap_t, w_t, int_t, gam_t, group_index, dt):
    """Step tables broadcast to one column per bank, pre-scaled by dt.

    Folding dt in here keeps the inner loop to one multiply and a few adds
    per step; the weight matmul is skipped entirely when the averaging
    weights vanish (decoupled markets).
    """
    gap_b = np.ascontiguousarray(gap_t[:, group_index] * dt)
    ig_b = np.ascontiguousarray((int_t + gam_t)[:, group_index] * dt)
    wdt_t = w_t * dt
    return gap_b, ig_b, wdt_t, bool(w_t.any())


def simulate_closed_loop(market: MarketParams | ValidatedMarket,
                         strategy: FeedbackStrategy, X0, spec: NoiseSpec,
                         *, grid: TimeGrid | None = None,
                         jobs: int | None = None,
                         batch_paths: int = BATCH_PATHS) -> TrajectoryEnsemble:
    """Euler-Maruyama simulation of every bank under an affine feedback rule.

    Controls at step n are evaluated from the step-n group averages
    (explicit scheme); the per-bank diffusion increment is the unit-norm
    mixture of the global, group, and idiosyncratic drivers scaled by the
    group volatility.  Works for any strategy kind: mean-field strategies
    are applied with sample group averages in place of the means.

    ``batch_paths`` trades memory for loop overhead and never changes the
    result: every path has its own seed-keyed stream.
    """
    vm = _ensure_sim(market)
    grid = grid or strategy.grid
    sizes, group_index, sig, loads = _bank_layout(vm)
    gap_t, w_t, int_t = _strategy_tables(strategy, grid)
    mean, std = _expand_x0(X0, sizes)
    dt = grid.dt
    times = grid.times()
    n_steps = grid.n_steps
    d = vm.d
    proj = _group_projector(group_index, d)
    gam_t = np.stack(
        [[g.gamma(t) for g in vm.groups] for t in times[:n_steps]]
    )
    gap_b, ig_b, wdt_t, use_w = _per_bank_tables(gap_t, w_t, int_t, gam_t,
                                                 group_index, dt)

    def worker(batch: IncrementBatch) -> tuple[int, np.ndarray, np.ndarray]:
        # Noise stays path-major: step n of a path sits next to step n + 1,
        # so the strided per-step slices below read each cache line once.
        noise = _mixed_noise(batch, group_index, sig, loads)
        if ig_b.any():
            noise = noise + ig_b
        x0 = mean + std * batch.x0_normals
        states = np.empty((batch.n_paths, len(group_index), n_steps + 1))
        states[:, :, 0] = x0
        x = x0.copy()
        drift = np.empty_like(x)
        avg = x @ proj.T
        for n in range(n_steps):
            gavg = avg if d == 1 else avg[:, group_index]
            np.subtract(gavg, x, out=drift)
            drift *= gap_b[n]
            if use_w:
                drift += (avg @ wdt_t[n].T)[:, group_index]
            drift += noise[:, n, :]
            x += drift
            if not np.abs(x).max() <= BLOWUP_LIMIT:
                raise SimulationBlowUp(float(times[n + 1]))
            states[:, :, n + 1] = x
            avg = x @ proj.T
        return batch.start, x0, states

    n_banks = int(sum(sizes))
    all_states = np.empty((spec.n_paths, n_banks, n_steps + 1))
    all_x0 = np.empty((spec.n_paths, n_banks))
    for start, x0, states in _run_batches(spec, grid, sizes, worker, jobs,
                                          batch_paths):
        all_states[start : start + states.shape[0]] = states
        all_x0[start : start + x0.shape[0]] = x0
    return TrajectoryEnsemble.from_states(grid, all_states,
                                          tuple(group_index), x0=all_x0)


def simulate_mfg_mean(market: MarketParams | ValidatedMarket,
                      mfg_path: CoefficientPath, spec: NoiseSpec,
                      *, m0=0.0, grid: TimeGrid | None = None,
                      n_banks_per_group: Sequence[int] | None = None,
                      jobs: int | None = None,
                      batch_paths: int = BATCH_PATHS) -> np.ndarray:
    """Conditional group means under the mean-field equilibrium.

    dm_k = (sum_h psi~_{k,h} m_h + mu_k + gamma_k) dt
           + sigma_k (rho dW0 + sqrt(1-rho^2) rho_k dWk),

    driven by the 1 + d common drivers only.  Passing the
    ``n_banks_per_group`` used by a finite simulation with the same spec
    and grid reproduces its exact driver increments, coupling the mean
    flow to the ensemble; the default draws no idiosyncratic columns.

    Returns an array [n_paths, d, n_steps + 1].
    """
    vm = market if isinstance(market, ValidatedMarket) else validate(market,
                                                                     Mode.MFG)
    d = vm.d
    strategy = feedback_mfg(mfg_path, vm)
    grid = grid or mfg_path.grid
    _, w_t, int_t = _strategy_tables(strategy, grid)
    if n_banks_per_group is None:
        n_banks_per_group = (0,) * d
    dt = grid.dt
    times = grid.times()
    n_steps = grid.n_steps
    gam_t = np.stack(
        [[g.gamma(t) for g in vm.groups] for t in times[:n_steps]]
    )
    sig = np.array([g.sigma for g in vm.groups])
    loads = np.array([noise_loadings(vm.rho, g.rho_k) for g in vm.groups])
    start_mean = np.full(d, float(m0)) if np.isscalar(m0) else np.asarray(
        m0, dtype=float)
    if start_mean.shape != (d,):
        raise ValueError(f"m0 needs one mean per group ({d})")

    def worker(batch: IncrementBatch) -> tuple[int, np.ndarray]:
        group_drv = batch.drivers[:, :, 1 : 1 + d]
        noise = sig * (loads[:, 0] * batch.drivers[:, :, :1]
                       + loads[:, 1] * group_drv)
        means = np.empty((batch.n_paths, d, n_steps + 1))
        m = np.broadcast_to(start_mean, (batch.n_paths, d)).copy()
        means[:, :, 0] = m
        for n in range(n_steps):
            m = m + (m @ w_t[n].T + int_t[n] + gam_t[n]) * dt + noise[:, n, :]
            if not np.isfinite(m).all() or (np.abs(m) > BLOWUP_LIMIT).any():
                raise SimulationBlowUp(float(times[n + 1]))
            means[:, :, n + 1] = m
        return batch.start, means

    out = np.empty((spec.n_paths, d, n_steps + 1))
    for start, means in _run_batches(spec, grid, n_banks_per_group, worker,
                                     jobs, batch_paths):
        out[start : start + means.shape[0]] = means
    return out


def distance_process(ensemble: TrajectoryEnsemble) -> np.ndarray:
    """Per-path difference of the two group averages."""
    if ensemble.d != 2:
        raise ValueError("distance process is defined for two groups")
    return ensemble.group_averages[:, 0, :] - ensemble.group_averages[:, 1, :]


@dataclass(frozen=True)
class HittingEstimate:
    """Monte Carlo first-passage estimate with its binomial standard error."""

    probability: float
    stderr: float
    n_hits: int
    n_paths: int


def mc_hitting_probability(market: MarketParams | ValidatedMarket,
                           spec: NoiseSpec, default: DefaultSpec,
                           strategy: FeedbackStrategy | None = None,
                           *, x0=0.0, grid: TimeGrid | None = None,
                           jobs: int | None = None,
                           batch_paths: int = BATCH_PATHS) -> HittingEstimate:
    """Fraction of paths whose target series reaches the barrier by T.

    The barrier is monitored at grid nodes only (t=0 included), so
    excursions below the level inside a step go unseen: the estimate is
    biased low relative to the continuously monitored probability by
    roughly the barrier shift 0.5826 * vol * sqrt(dt) of the monitored
    series.  The returned standard error is binomial.

    Without an explicit strategy, two-group markets are simulated under
    their closed-loop feedback rule and any other group count under the
    mean-field rule applied at finite N.
    """
    vm = _ensure_sim(market)
    if strategy is None:
        if vm.d == 2:
            strategy = feedback_closed(solve_closed_loop(vm, grid), vm)
        else:
            strategy = feedback_mfg(solve_mfg(vm, grid), vm)
    grid = grid or strategy.grid
    sizes, group_index, sig, loads = _bank_layout(vm)
    if default.kind is not TargetKind.GLOBAL_AVERAGE:
        if not 0 <= default.group < vm.d:
            raise ValueError("target group out of range")
    if default.kind is TargetKind.SINGLE_BANK:
        if not 0 <= default.bank < sizes[default.group]:
            raise ValueError("target bank out of range")
        flat = _flat_bank_index(tuple(group_index), default.group, default.bank)
    gap_t, w_t, int_t = _strategy_tables(strategy, grid)
    mean, std = _expand_x0(x0, sizes)
    dt = grid.dt
    times = grid.times()
    n_steps = grid.n_steps
    proj = _group_projector(group_index, vm.d)
    beta = np.asarray(vm.beta)
    gam_t = np.stack(
        [[g.gamma(t) for g in vm.groups] for t in times[:n_steps]]
    )
    level = default.level

    def target_of(x: np.ndarray, avg: np.ndarray) -> np.ndarray:
        if default.kind is TargetKind.GLOBAL_AVERAGE:
            return avg[:, 0] if vm.d == 1 else avg @ beta
        if default.kind is TargetKind.GROUP_AVERAGE:
            return avg[:, default.group]
        return x[:, flat]

    gap_b, ig_b, wdt_t, use_w = _per_bank_tables(gap_t, w_t, int_t, gam_t,
                                                 group_index, dt)

    d = vm.d

    def worker(batch: IncrementBatch) -> int:
        # Path-major noise: per-step slices reuse cache lines across steps.
        noise = _mixed_noise(batch, group_index, sig, loads)
        if ig_b.any():
            noise = noise + ig_b
        x = mean + std * batch.x0_normals
        drift = np.empty_like(x)
        avg = x @ proj.T
        # Running minimum of the monitored series over all grid nodes.
        floor = np.array(target_of(x, avg))
        for n in range(n_steps):
            gavg = avg if d == 1 else avg[:, group_index]
            np.subtract(gavg, x, out=drift)
            drift *= gap_b[n]
            if use_w:
                drift += (avg @ wdt_t[n].T)[:, group_index]
            drift += noise[:, n, :]
            x += drift
            np.abs(x, out=drift)
            if not drift.max() <= BLOWUP_LIMIT:
                raise SimulationBlowUp(float(times[n + 1]))
            avg = x @ proj.T
            np.minimum(floor, target_of(x, avg), out=floor)
        return int((floor <= level).sum())

    hits = sum(_run_batches(spec, grid, sizes, worker, jobs, batch_paths))
    p = hits / spec.n_paths
    stderr = math.sqrt(p * (1.0 - p) / spec.n_paths)
    return HittingEstimate(probability=p, stderr=stderr, n_hits=hits,
                           n_paths=spec.n_paths)
