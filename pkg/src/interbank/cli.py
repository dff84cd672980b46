"""Command-line interface: solve, simulate, sweep, check, prob.

Configuration is a flat key-value text file with one [group.k] section per
group::

    rho = 0.0
    horizon = 1.0
    steps = 2000
    seed = 7
    paths = 1000
    # beta = 0.2, 0.8          # only needed when groups omit n_banks

    [group.1]
    sigma = 1.0
    q = 2.0
    eps = 5.0
    c = 0.0
    lam = 0.1
    rho_k = 0.0
    n_banks = 2
    gamma = 0.0                # or "0.5, 0.25:1.0, 0.75:-0.2" (value, break:value, ...)

Run-specific keys: ``systems`` (solve: closed, open, limiting, mfg),
``x0`` (per-group start, "mean" or "mean~std" for i.i.d. normal starts),
``barrier``/``target``/``mc`` (prob), ``axis``/``values`` (sweep),
``checks`` (check: identity, bounds, rowsums), ``jobs``, ``out``,
``raw_dump``.  The flags --out, --seed, --steps, --paths override the
corresponding config keys.

Every run writes CSV artifacts atomically plus a JSON manifest that
re-parses to the resolved configuration.  Exit codes: 0 success and all
hard checks passed, 1 a hard check failed, 2 rejected parameters,
3 integration or simulation blow-up.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .analysis import (
    SweepAxis,
    analytic_systemic_probability,
    check_mfg_row_sums,
    check_prop1_bounds,
    check_sum_identity,
    monitoring_deficit,
    sweep_claim,
    sweep_liquidity,
)
from .equilibrium import feedback_closed, feedback_mfg
from .model import (
    GroupParams,
    MarketParams,
    Mode,
    RejectedParams,
    StepFunction,
    TimeGrid,
    validate,
)
from .riccati import (
    BlowUp,
    atomic_write_text,
    solve_closed_loop,
    solve_limiting,
    solve_mfg,
    solve_open_loop,
)
from .simulate import (
    DefaultSpec,
    NoiseSpec,
    SimulationBlowUp,
    TargetKind,
    distance_process,
    mc_hitting_probability,
    simulate_closed_loop,
)

_SOLVERS = {
    "closed": solve_closed_loop,
    "open": solve_open_loop,
    "limiting": solve_limiting,
    "mfg": solve_mfg,
}

_GROUP_KEYS = ("sigma", "q", "eps", "c", "lam", "rho_k", "gamma", "n_banks")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one CLI invocation."""

    command: str
    market: MarketParams
    n_steps: int
    seed: int
    n_paths: int
    out_dir: str
    jobs: int | None = None
    quiet: bool = False
    systems: tuple[str, ...] = ()
    x0: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    barrier: DefaultSpec | None = None
    mc: bool = False
    raw_dump: bool = False
    axis: SweepAxis | None = None
    values: tuple[float, ...] = ()
    checks: tuple[str, ...] = ()


def parse_config_text(text: str) -> dict[str, dict[str, str]]:
    """Split a config file into sections of raw key-value strings."""
    sections: dict[str, dict[str, str]] = {"": {}}
    current = sections[""]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        current[key.strip()] = value.strip()
    return sections


def _parse_gamma(text: str) -> StepFunction:
    parts = [p.strip() for p in text.split(",")]
    values = [float(parts[0])]
    breaks = []
    for part in parts[1:]:
        when, _, value = part.partition(":")
        breaks.append(float(when))
        values.append(float(value))
    return StepFunction(breaks=tuple(breaks), values=tuple(values))


def _parse_x0(text: str, d: int) -> tuple[tuple[float, float], ...]:
    tokens = [t.strip() for t in text.split(",")]
    if len(tokens) == 1:
        tokens = tokens * d
    if len(tokens) != d:
        raise ValueError(f"x0 needs one entry or one per group ({d})")
    out = []
    for token in tokens:
        mean, _, std = token.partition("~")
        out.append((float(mean), float(std) if std else 0.0))
    return tuple(out)


def _parse_target(text: str, barrier: float) -> DefaultSpec:
    parts = text.split(":")
    if parts[0] == "global":
        return DefaultSpec.global_average(barrier)
    if parts[0] == "group":
        return DefaultSpec.group_average(barrier, int(parts[1]) - 1)
    if parts[0] == "bank":
        return DefaultSpec.single_bank(barrier, int(parts[1]) - 1,
                                       int(parts[2]) - 1)
    raise ValueError(f"unknown target {text!r}")


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _build_market(sections: dict[str, dict[str, str]]) -> MarketParams:
    top = sections[""]
    names = sorted(
        (name for name in sections if name.startswith("group.")),
        key=lambda name: int(name.split(".", 1)[1]),
    )
    if not names:
        raise ValueError("at least one [group.k] section is required")
    groups = []
    for name in names:
        entries = sections[name]
        unknown = set(entries) - set(_GROUP_KEYS)
        if unknown:
            raise ValueError(f"[{name}]: unknown keys {sorted(unknown)}")
        groups.append(GroupParams(
            sigma=float(entries.get("sigma", "1.0")),
            q=float(entries["q"]),
            eps=float(entries["eps"]),
            c=float(entries.get("c", "0.0")),
            lam=float(entries.get("lam", "0.0")),
            rho_k=float(entries.get("rho_k", "0.0")),
            gamma=_parse_gamma(entries.get("gamma", "0.0")),
            n_banks=int(entries["n_banks"]) if "n_banks" in entries else None,
        ))
    beta = None
    if "beta" in top:
        beta = tuple(float(b) for b in top["beta"].split(","))
    return MarketParams(
        rho=float(top.get("rho", "0.0")),
        horizon=float(top.get("horizon", "1.0")),
        groups=tuple(groups),
        beta=beta,
    )


def build_runconfig(command: str, sections: dict[str, dict[str, str]],
                    overrides: argparse.Namespace) -> RunConfig:
    top = sections[""]
    market = _build_market(sections)
    d = len(market.groups)
    n_steps = overrides.steps or int(top.get("steps", "2000"))
    seed = overrides.seed if overrides.seed is not None else int(
        top.get("seed", "0"))
    n_paths = overrides.paths or int(top.get("paths", "1000"))
    out_dir = overrides.out or top.get("out", "out")
    barrier = None
    if "barrier" in top:
        barrier = _parse_target(top.get("target", "global"),
                                float(top["barrier"]))
    axis = SweepAxis(top["axis"]) if "axis" in top else None
    values = tuple(
        float(v) for v in top["values"].split(",")) if "values" in top else ()
    systems = tuple(
        s.strip() for s in top.get("systems", "").split(",") if s.strip())
    checks = tuple(
        s.strip() for s in top.get("checks", "").split(",") if s.strip())
    return RunConfig(
        command=command,
        market=market,
        n_steps=n_steps,
        seed=seed,
        n_paths=n_paths,
        out_dir=out_dir,
        jobs=int(top["jobs"]) if "jobs" in top else None,
        quiet=overrides.quiet,
        systems=systems,
        x0=_parse_x0(top.get("x0", "0.0"), d),
        barrier=barrier,
        mc=_parse_bool(top.get("mc", "false")),
        raw_dump=_parse_bool(top.get("raw_dump", "false")),
        axis=axis,
        values=values,
        checks=checks,
    )


def config_to_manifest(config: RunConfig, outputs: list[str]) -> dict:
    """JSON-ready echo of the resolved run; re-parses to the same RunConfig."""
    market = config.market
    groups = []
    for g in market.groups:
        groups.append({
            "sigma": g.sigma, "q": g.q, "eps": g.eps, "c": g.c,
            "lam": g.lam, "rho_k": g.rho_k, "n_banks": g.n_banks,
            "gamma": {"breaks": list(g.gamma.breaks),
                      "values": list(g.gamma.values)},
        })
    barrier = None
    if config.barrier is not None:
        barrier = {
            "level": config.barrier.level,
            "kind": config.barrier.kind.value,
            "group": config.barrier.group,
            "bank": config.barrier.bank,
        }
    return {
        "version": __version__,
        "command": config.command,
        "market": {
            "rho": market.rho,
            "horizon": market.horizon,
            "beta": list(market.beta) if market.beta is not None else None,
            "groups": groups,
        },
        "settings": {
            "steps": config.n_steps,
            "seed": config.seed,
            "paths": config.n_paths,
            "out": config.out_dir,
            "jobs": config.jobs,
            "systems": list(config.systems),
            "x0": [list(pair) for pair in config.x0],
            "mc": config.mc,
            "raw_dump": config.raw_dump,
            "axis": config.axis.value if config.axis else None,
            "values": list(config.values),
            "checks": list(config.checks),
        },
        "barrier": barrier,
        "outputs": outputs,
    }


def runconfig_from_manifest(manifest: dict) -> RunConfig:
    market = manifest["market"]
    groups = tuple(
        GroupParams(
            sigma=g["sigma"], q=g["q"], eps=g["eps"], c=g["c"], lam=g["lam"],
            rho_k=g["rho_k"], n_banks=g["n_banks"],
            gamma=StepFunction(breaks=tuple(g["gamma"]["breaks"]),
                               values=tuple(g["gamma"]["values"])),
        )
        for g in market["groups"]
    )
    settings = manifest["settings"]
    barrier = None
    if manifest.get("barrier"):
        raw = manifest["barrier"]
        barrier = DefaultSpec(level=raw["level"], kind=TargetKind(raw["kind"]),
                              group=raw["group"], bank=raw["bank"])
    return RunConfig(
        command=manifest["command"],
        market=MarketParams(
            rho=market["rho"], horizon=market["horizon"], groups=groups,
            beta=tuple(market["beta"]) if market["beta"] else None,
        ),
        n_steps=settings["steps"],
        seed=settings["seed"],
        n_paths=settings["paths"],
        out_dir=settings["out"],
        jobs=settings["jobs"],
        systems=tuple(settings["systems"]),
        x0=tuple(tuple(pair) for pair in settings["x0"]),
        barrier=barrier,
        mc=settings["mc"],
        raw_dump=settings["raw_dump"],
        axis=SweepAxis(settings["axis"]) if settings["axis"] else None,
        values=tuple(settings["values"]),
        checks=tuple(settings["checks"]),
    )


def _say(config: RunConfig, message: str) -> None:
    if not config.quiet:
        print(message)


def _write_manifest(config: RunConfig, outputs: list[str]) -> None:
    path = os.path.join(config.out_dir, f"{config.command}_manifest.json")
    atomic_write_text(path, json.dumps(config_to_manifest(config, outputs),
                                       indent=2) + "\n")


def _grid(config: RunConfig) -> TimeGrid:
    return TimeGrid(t_end=config.market.horizon, n_steps=config.n_steps)


def _default_systems(config: RunConfig) -> tuple[str, ...]:
    market = config.market
    sized = all(g.n_banks is not None for g in market.groups)
    systems = []
    if len(market.groups) == 2:
        if sized:
            systems += ["closed", "open"]
        systems.append("limiting")
    systems.append("mfg")
    return tuple(systems)


def cmd_solve(config: RunConfig) -> int:
    systems = config.systems or _default_systems(config)
    outputs = []
    for name in systems:
        if name not in _SOLVERS:
            raise ValueError(f"unknown system {name!r}")
        path = _SOLVERS[name](config.market, _grid(config))
        filename = os.path.join(config.out_dir, f"{name}.csv")
        path.write_csv(filename)
        outputs.append(filename)
        _say(config, f"wrote {filename} ({len(path.labels)} components)")
    _write_manifest(config, outputs)
    return 0


def _auto_strategy(config: RunConfig):
    market = config.market
    if len(market.groups) == 2:
        return feedback_closed(solve_closed_loop(market, _grid(config)),
                               market)
    return feedback_mfg(solve_mfg(market, _grid(config)), market)


def _quantile_header(d: int) -> list[str]:
    cols = ["t"]
    for k in range(1, d + 1):
        cols += [f"g{k}_mean", f"g{k}_q05", f"g{k}_q25", f"g{k}_q50",
                 f"g{k}_q75", f"g{k}_q95"]
    cols.append("global_mean")
    if d == 2:
        cols += ["dist_mean", "dist_std"]
    return cols


def cmd_simulate(config: RunConfig) -> int:
    spec = NoiseSpec.from_market(config.market, config.seed, config.n_paths)
    strategy = _auto_strategy(config)
    ensemble = simulate_closed_loop(config.market, strategy, config.x0, spec,
                                    jobs=config.jobs)
    d = ensemble.d
    rows = np.empty((ensemble.grid.n_steps + 1, len(_quantile_header(d))))
    rows[:, 0] = ensemble.times
    col = 1
    for k in range(d):
        series = ensemble.group_averages[:, k, :]
        rows[:, col] = series.mean(axis=0)
        rows[:, col + 1 : col + 6] = np.quantile(
            series, [0.05, 0.25, 0.50, 0.75, 0.95], axis=0).T
        col += 6
    rows[:, col] = ensemble.global_average.mean(axis=0)
    col += 1
    if d == 2:
        distance = distance_process(ensemble)
        rows[:, col] = distance.mean(axis=0)
        rows[:, col + 1] = distance.std(axis=0)
    summary = os.path.join(config.out_dir, "ensemble_summary.csv")
    lines = [",".join(_quantile_header(d))]
    lines += [",".join(f"{x:.17g}" for x in row) for row in rows]
    atomic_write_text(summary, "\n".join(lines) + "\n")
    outputs = [summary]
    _say(config, f"wrote {summary} ({ensemble.n_paths} paths)")
    if config.raw_dump:
        raw = os.path.join(config.out_dir, "paths.bin")
        header = (f"raw float64 little-endian paths={ensemble.n_paths} "
                  f"banks={ensemble.n_banks} nodes={ensemble.grid.n_steps + 1}\n")
        tmp = raw + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(ensemble.states.astype("<f8").tobytes())
        os.replace(tmp, raw)
        outputs.append(raw)
        _say(config, f"wrote {raw}")
    _write_manifest(config, outputs)
    return 0


def cmd_sweep(config: RunConfig) -> int:
    if config.axis is None or not config.values:
        raise ValueError("sweep needs 'axis' and 'values' in the config")
    result = sweep_liquidity(config.market, config.axis, config.values,
                             n_steps=config.n_steps)
    filename = os.path.join(config.out_dir,
                            f"sweep_{config.axis.value}.csv")
    lines = ["axis,value,t,rate"]
    for value, times, curve in zip(result.values, result.times, result.curves):
        for t, r in zip(times, curve):
            lines.append(
                f"{config.axis.value},{value:.17g},{t:.17g},{r:.17g}")
    atomic_write_text(filename, "\n".join(lines) + "\n")
    _write_manifest(config, [filename])
    description, ok = sweep_claim(result)
    summary = ", ".join(f"{v:g}:{r:.6g}" for v, r in zip(result.values,
                                                         result.rate0))
    print(f"{'PASS' if ok else 'FAIL'} sweep {config.axis.value}: "
          f"{description}; rate(0) by value: {summary}")
    return 0 if ok else 1


def cmd_check(config: RunConfig) -> int:
    checks = config.checks or ("identity", "bounds", "rowsums")
    results = []
    market = config.market
    grid = _grid(config)
    for name in checks:
        if name == "identity":
            limiting = solve_limiting(market, grid)
            eta, phi = check_sum_identity(limiting)
            value, threshold = max(eta, phi), 1e-8
            ok = value < threshold
            detail = f"max|etahat4+etahat5|={eta:.3e} max|phihat4+phihat5|={phi:.3e}"
        elif name == "bounds":
            limiting = solve_limiting(market, grid)
            value, threshold = check_prop1_bounds(limiting, market), -1e-8
            ok = value >= threshold
            detail = f"min slack={value:.3e}"
        elif name == "rowsums":
            value, threshold = check_mfg_row_sums(solve_mfg(market, grid)), 1e-8
            ok = value < threshold
            detail = f"max|sum_h psim_k_h|={value:.3e}"
        else:
            raise ValueError(f"unknown check {name!r}")
        results.append((name, value, threshold, ok))
        print(f"{'PASS' if ok else 'FAIL'} check {name}: {detail} "
              f"(threshold {threshold:g})")
    filename = os.path.join(config.out_dir, "check_results.csv")
    lines = ["check,value,threshold,passed"]
    lines += [f"{n},{v:.17g},{t:.17g},{int(ok)}" for n, v, t, ok in results]
    atomic_write_text(filename, "\n".join(lines) + "\n")
    _write_manifest(config, [filename])
    return 0 if all(ok for *_, ok in results) else 1


def cmd_prob(config: RunConfig) -> int:
    if config.barrier is None:
        raise ValueError("prob needs 'barrier' in the config")
    market = config.market
    n_total = sum(g.n_banks for g in market.groups)
    sigma = market.groups[0].sigma
    level = config.barrier.level
    analytic = analytic_systemic_probability(level, sigma, n_total,
                                             market.horizon)
    rows = [("analytic", analytic)]
    ok = True
    print(f"analytic systemic probability: {analytic:.6g} "
          f"(D={level:g}, sigma={sigma:g}, N={n_total}, T={market.horizon:g})")
    if config.mc:
        spec = NoiseSpec.from_market(market, config.seed, config.n_paths)
        estimate = mc_hitting_probability(market, spec, config.barrier,
                                          x0=config.x0, grid=_grid(config),
                                          jobs=config.jobs)
        deficit = monitoring_deficit(level, sigma, n_total, market.horizon,
                                     _grid(config).dt)
        gap = analytic - estimate.probability
        allowance = 3.0 * estimate.stderr
        ok = -allowance <= gap <= allowance + deficit
        rows += [("mc", estimate.probability), ("stderr", estimate.stderr),
                 ("deficit", deficit), ("n_hits", estimate.n_hits),
                 ("n_paths", estimate.n_paths)]
        print(f"{'PASS' if ok else 'FAIL'} prob: mc={estimate.probability:.6g}"
              f" +- {estimate.stderr:.2g}, analytic-mc={gap:.3e}"
              f" (3*stderr={allowance:.3e} + monitoring deficit {deficit:.3e})")
    filename = os.path.join(config.out_dir, "prob.csv")
    lines = ["quantity,value"] + [f"{n},{v:.17g}" for n, v in rows]
    atomic_write_text(filename, "\n".join(lines) + "\n")
    _write_manifest(config, [filename])
    return 0 if ok else 1


_COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "prob": cmd_prob,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="interbank",
        description="Grouped interbank lending game: solve, simulate, analyze.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None,
                       help="time-grid steps M")
        p.add_argument("--paths", type=int, default=None,
                       help="Monte Carlo path count")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            sections = parse_config_text(fh.read())
        config = build_runconfig(args.command, sections, args)
        validated = validate(config.market,
                             Mode.CLOSED_LOOP if len(config.market.groups) == 2
                             else Mode.MFG)
        for warning in validated.warnings:
            if not config.quiet:
                print(f"warning: {warning}", file=sys.stderr)
        os.makedirs(config.out_dir, exist_ok=True)
        return _COMMANDS[config.command](config)
    except RejectedParams as exc:
        print(f"rejected parameters: {exc}", file=sys.stderr)
        return 2
    except (BlowUp, SimulationBlowUp) as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
