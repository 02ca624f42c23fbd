"""Config-driven experiment runner.

Subcommands
-----------
simulate    replicate trajectories at the configured record times
stationary  draws from the stationary sampler, optionally KS-checked
            against long-horizon simulation
limits      sqrt(t)-scaled statistics on a time grid with a KS fit
            against the mixture limit law
tailindex   per-anchor Goldie-Kesten indices and their minimum
selftest    reduced-size run of the full acceptance suite (< 60 s)

Every run writes a ``manifest.json`` echoing the resolved config, the
seed and derived quantities; outputs are reproducible bit-exactly from
the manifest alone.  Replicate k always uses the stream keyed by
(seed, purpose, k), so results are identical for any --threads value.

Exit codes: 0 ok, 1 config error, 2 numerical failure (overflow,
non-contractive source, wrong regime), 3 selftest failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, appmodels, config as config_mod, limits, ou, sre, streams
from . import chain as chain_mod
from .errors import ConfigError, OUSwitchError
from .pathfunc import FunctionalModel, functional_trajectory


def _fmt(x: float) -> str:
    # repr gives the shortest round-trip decimal form
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _manifest(cfg, seed, threads, command, derived, wall_time) -> dict:
    return {
        "command": command,
        "config": cfg.echo(),
        "seed": int(seed),
        "threads": int(threads),
        "versions": {
            "artifact": __version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
        "derived": derived,
        "wall_time_s": wall_time,
    }


def _write_summary(out: Path, manifest: dict, metrics: dict) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump({"manifest": manifest, "metrics": metrics}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _derived(cfg, q) -> dict:
    pi = chain_mod.stationary_distribution(q)
    rc = config_mod.classify_config(cfg, q)
    label, _ = config_mod.drift_entries(cfg)
    return {
        "pi": [float(p) for p in pi],
        label: rc.e_pi_a,
        "regime": rc.regime,
        "exact_arithmetic": rc.exact,
    }


def _run_section(cfg, key, default=None, required=False):
    if key in cfg.run:
        return cfg.run[key]
    if required:
        raise ConfigError(f"run section needs {key!r}")
    return default


def _replicate_rows(kind, model, horizon, record, seed, rep):
    rng = streams.substream(seed, streams.TRAJECTORY, rep)
    if kind == "ou":
        times, values, states = ou.simulate(model, horizon, record, rng)
        flags = np.zeros(len(times), dtype=bool)
    elif kind == "cir":
        times, values, states = appmodels.cir_simulate(model, horizon, record, rng)
        flags = np.zeros(len(times), dtype=bool)
    elif kind == "sis":
        traj = appmodels.sis_simulate(model, horizon, record, rng)
        times, values, states, flags = traj.times, traj.infected, traj.states, traj.underflow
    elif kind == "functional":
        path = chain_mod.simulate_path(model.chain, 0, horizon, rng)
        times = np.asarray(record, dtype=float)
        values = functional_trajectory(model, path, times)
        states = np.array([path.state_at(t) for t in times], dtype=np.int64)
        flags = np.zeros(len(times), dtype=bool)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    rows = [
        [_fmt(t), rep, _fmt(v), int(s)]
        for t, v, s in zip(times, values, states)
    ]
    return rows, int(flags.sum())


def cmd_simulate(cfg, seed, out, threads) -> int:
    t0 = time.perf_counter()
    q = config_mod.build_chain(cfg)
    model = config_mod.build_model(cfg, q)
    kind = cfg.model["kind"]
    horizon = float(_run_section(cfg, "horizon", required=True))
    record_raw = _run_section(cfg, "record", required=True)
    record = [float(v) for v in (record_raw if isinstance(record_raw, list) else [record_raw])]
    replicates = int(_run_section(cfg, "replicates", required=True))
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")

    def work(rep):
        return _replicate_rows(kind, model, horizon, record, seed, rep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(replicates)))
    else:
        results = [work(rep) for rep in range(replicates)]
    rows = [row for block, _ in results for row in block]
    n_underflow = sum(n for _, n in results)
    _write_csv(out / "trajectory.csv", ["time", "replicate", "value", "state"], rows)
    manifest = _manifest(cfg, seed, threads, "simulate", _derived(cfg, q), time.perf_counter() - t0)
    _write_summary(out, manifest, {"n_rows": len(rows), "n_underflow": n_underflow})
    return 0


def _stationary_sampler_for(cfg, q, model, kind, seed):
    rng = streams.substream(seed, streams.MIXTURE)
    n_cycles = int(_run_section(cfg, "cycles_per_state", 10_000))
    if kind == "ou":
        return ou.stationary_sampler(model, n_cycles, rng)
    if kind == "cir":
        return appmodels.cir_stationary_sampler(model, rng, n_cycles)
    if kind == "functional":
        return ou.functional_mixture(q, model.c, model.d, n_cycles, rng)
    if kind == "sis":
        # stationary object is the law of 1/I
        return ou.functional_mixture(q, model.gamma, model.beta, n_cycles, rng)
    raise ConfigError(f"unknown model kind {kind!r}")


def cmd_stationary(cfg, seed, out, threads) -> int:
    t0 = time.perf_counter()
    q = config_mod.build_chain(cfg)
    model = config_mod.build_model(cfg, q)
    kind = cfg.model["kind"]
    n_draws = int(_run_section(cfg, "draws", 10_000))
    sampler = _stationary_sampler_for(cfg, q, model, kind, seed)
    draws = sampler.draw(n_draws, streams.substream(seed, streams.MIXTURE, 1))
    _write_csv(out / "draws.csv", ["draw", "value"], ((i, _fmt(v)) for i, v in enumerate(draws)))
    metrics: dict = {"n_draws": n_draws}
    if bool(_run_section(cfg, "compare", False)):
        horizon = float(_run_section(cfg, "horizon", required=True))
        replicates = int(_run_section(cfg, "replicates", required=True))

        def terminal(rep):
            rng = streams.substream(seed, streams.TRAJECTORY, rep)
            if kind == "ou":
                return ou.simulate(model, horizon, [horizon], rng)[1][0]
            if kind == "cir":
                return appmodels.cir_simulate(model, horizon, [horizon], rng)[1][0]
            if kind == "sis":
                return 1.0 / appmodels.sis_simulate(model, horizon, [horizon], rng).infected[0]
            path = chain_mod.simulate_path(model.chain, 0, horizon, rng)
            return functional_trajectory(model, path, np.array([horizon]))[0]

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                terminals = np.fromiter(
                    pool.map(terminal, range(replicates)), dtype=float, count=replicates
                )
        else:
            terminals = np.fromiter(
                (terminal(r) for r in range(replicates)), dtype=float, count=replicates
            )
        from .stats import ks_two_sample

        d, scaled = ks_two_sample(draws, terminals)
        metrics.update(
            {"ks_vs_simulation": d, "ks_scaled": scaled, "horizon": horizon, "replicates": replicates}
        )
    manifest = _manifest(cfg, seed, threads, "stationary", _derived(cfg, q), time.perf_counter() - t0)
    _write_summary(out, manifest, metrics)
    return 0


def cmd_limits(cfg, seed, out, threads) -> int:
    t0 = time.perf_counter()
    q = config_mod.build_chain(cfg)
    model = config_mod.build_model(cfg, q)
    kind = cfg.model["kind"]
    grid_raw = _run_section(cfg, "grid", required=True)
    grid = [float(v) for v in (grid_raw if isinstance(grid_raw, list) else [grid_raw])]
    replicates = int(_run_section(cfg, "replicates", required=True))
    n_cycles = int(_run_section(cfg, "cycles_per_state", 100_000))
    n_limit = int(_run_section(cfg, "draws", 100_000))
    rng = streams.substream(seed, streams.LIMITS)
    if kind in ("ou", "functional"):
        ex = limits.regime_experiment(model, grid, replicates, rng, n_cycles, n_limit)
    elif kind == "cir":
        ex = appmodels.cir_regime_experiment(model, grid, replicates, rng, n_cycles, n_limit)
    elif kind == "sis":
        ex = appmodels.sis_regime_experiment(model, grid, replicates, rng, n_cycles, n_limit)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    rows = []
    for i, t in enumerate(ex.t_grid):
        for rep in range(replicates):
            rows.append([_fmt(t), rep, _fmt(ex.statistics[rep, i])])
    _write_csv(out / "statistics.csv", ["t", "replicate", "statistic"], rows)
    metrics = {
        "regime": ex.regime,
        "ks_per_t": {str(t): float(d) for t, d in zip(ex.t_grid, ex.ks)},
        "ks_decreasing": ex.ks_decreasing(),
        "limit_kind": ex.law.kind,
        "limit_scales": [float(s) for s in ex.law.scales],
        "scale_sq_raw": [float(s) for s in ex.params.scale_sq],
        "scale_sq_centered": [float(s) for s in ex.params.scale_centered_sq],
    }
    manifest = _manifest(cfg, seed, threads, "limits", _derived(cfg, q), time.perf_counter() - t0)
    _write_summary(out, manifest, metrics)
    return 0


def cmd_tailindex(cfg, seed, out, threads) -> int:
    t0 = time.perf_counter()
    q = config_mod.build_chain(cfg)
    config_mod.build_model(cfg, q)  # validates tables
    _, entries = config_mod.drift_entries(cfg)
    table = np.array([float(v) for v in entries])
    n_cycles = int(_run_section(cfg, "cycles_per_state", 100_000))
    per_state = {}
    rows = []
    for j in range(q.n_states):
        rng = streams.substream(seed, streams.TAILINDEX, j)
        cycles = chain_mod.sample_cycles(q, j, n_cycles, rng)
        log_a = -cycles.rewards(table)
        est = sre.goldie_kesten_index(log_a)
        per_state[j] = est
        rows.append([j, _fmt(est.nu) if np.isfinite(est.nu) else "inf", n_cycles])
    star = sre.nu_star(per_state)
    _write_csv(out / "tailindex.csv", ["state", "nu_hat", "n_cycles"], rows)
    metrics = {
        "per_state": {str(j): (float(e.nu) if np.isfinite(e.nu) else "inf") for j, e in per_state.items()},
        "nu_star": float(star) if np.isfinite(star) else "inf",
        # the estimator exponentiates -c * (cycle integral of the drift
        # table); the variance perpetuity contracts with exponent 2 on the
        # same integral, so its own index is nu/2
        "exponent_convention": "mean exp(-c * cycle_integral(drift)) = 1",
    }
    manifest = _manifest(cfg, seed, threads, "tailindex", _derived(cfg, q), time.perf_counter() - t0)
    _write_summary(out, manifest, metrics)
    return 0


def cmd_selftest(out: Path | None) -> int:
    from .selftest import run_selftest

    return run_selftest(out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ouswitch",
        description="Simulation laboratory for regime-switching OU, CIR and SIS models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "stationary", "limits", "tailindex"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("selftest")
    p.add_argument("--out", type=Path, default=None)
    args = parser.parse_args(argv)

    try:
        if args.command == "selftest":
            return cmd_selftest(args.out)
        cfg = config_mod.load_config(args.config)
        seed = args.seed if args.seed is not None else int(_run_section(cfg, "seed", 0))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        handler = {
            "simulate": cmd_simulate,
            "stationary": cmd_stationary,
            "limits": cmd_limits,
            "tailindex": cmd_tailindex,
        }[args.command]
        return handler(cfg, seed, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OUSwitchError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
