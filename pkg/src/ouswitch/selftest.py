"""Reduced-size run of the acceptance suite (the ``selftest`` subcommand).

Each check mirrors one acceptance criterion at roughly one fifth to one
tenth of the full sample sizes, with KS tolerances widened by the
matching sqrt factor; the whole battery stays under a minute.  One line
is printed per criterion; any failure makes the command exit 3.

Check 3 (the stationary moment identity on the heavy-tailed two-state
benchmark) is reported as unattainable rather than failed: that
benchmark's stationary law has tail index 3/2, so its second moment is
infinite and the moment recursion must raise MomentDiverges.  The
selftest verifies that the guard fires; the full-size test suite keeps
the literal (red) assertion.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from math import exp, sqrt
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import appmodels, chain as chain_mod, limits, ou, sre, streams
from .errors import MomentDiverges, PremiseViolated
from .pathfunc import evaluate_F, g_function
from .stats import ks_one_sample, ks_two_sample

TWO_STATE_RATES = [[0.0, 1.0], [2.0, 0.0]]  # lambda01 = 1, lambda10 = 2

# Full-size KS tolerances sit near the 95th percentile of the null KS
# distribution; after sqrt-scaling them to the reduced sample sizes a
# small margin keeps the fixed-seed smoke run off that knife edge.
_MARGIN = 1.25


@dataclass
class CheckResult:
    number: int
    name: str
    status: str  # pass | fail | unattainable
    detail: str


def _spawn(seed, purpose, n):
    return [streams.substream(seed, purpose, k) for k in range(n)]


def _check_1(seed=101) -> CheckResult:
    q = chain_mod.validate_rates([[0.0]])
    model = ou.OUModel.build(q, a=[1.0], b=[np.sqrt(2.0)], y0=0.0)
    n = 20_000
    terms = np.array(
        [ou.simulate(model, 20.0, [20.0], g)[1][0] for g in _spawn(seed, 0, n)]
    )
    sd = np.sqrt(1.0 - np.exp(-40.0))
    d1 = ks_one_sample(terms, lambda x: ndtr(x / sd))
    mix = ou.stationary_sampler(model, 1000, streams.substream(seed, 1))
    d2 = ks_one_sample(mix.draw(n, streams.substream(seed, 2)), ndtr)
    tol = _MARGIN * 0.006 * np.sqrt(100_000 / n)
    ok = d1 < tol and d2 < tol
    return CheckResult(1, "classical OU oracle", "pass" if ok else "fail",
                       f"KS terminal {d1:.4f}, KS stationary {d2:.4f} (tol {tol:.4f})")


def _benchmark_stable():
    q = chain_mod.validate_rates(TWO_STATE_RATES)
    return q, ou.OUModel.build(q, a=[2.0, -1.0], b=[1.0, 2.0], y0=0.0)


def _check_2(seed=102) -> CheckResult:
    q, model = _benchmark_stable()
    n = 4000
    mix = ou.stationary_sampler(model, 10_000, streams.substream(seed, 1))
    draws = mix.draw(n, streams.substream(seed, 2))
    terms = np.array(
        [ou.simulate(model, 50.0, [50.0], g)[1][0] for g in _spawn(seed, 0, n)]
    )
    d, _ = ks_two_sample(draws, terms)
    tol = _MARGIN * 0.02 * np.sqrt(20_000 / n)
    return CheckResult(2, "stationary mixture vs long horizon", "pass" if d < tol else "fail",
                       f"KS {d:.4f} (tol {tol:.4f})")


def _check_3(seed=103) -> CheckResult:
    _, model = _benchmark_stable()
    try:
        ou.stationary_moment(model, 2, 20_000, streams.substream(seed, 0), n_cycles=20_000)
    except MomentDiverges as exc:
        return CheckResult(
            3, "moment identity (heavy-tailed benchmark)", "unattainable",
            f"second moment is infinite on this benchmark; guard raised MomentDiverges ({exc})",
        )
    return CheckResult(3, "moment identity (heavy-tailed benchmark)", "fail",
                       "expected MomentDiverges on the infinite-variance benchmark")


def _check_4(seed=104) -> CheckResult:
    q1 = chain_mod.validate_rates([[0.0]])
    sis1 = appmodels.SISModel.build(q1, [1.0], [0.002], n_pop=1000.0, i0=1.0)
    i50 = appmodels.sis_simulate(sis1, 50.0, [50.0], streams.substream(seed, 0)).infected[0]
    ok_const = abs(i50 - 500.0) < 1e-6
    q = chain_mod.validate_rates(TWO_STATE_RATES)
    sis = appmodels.SISModel.build(q, [1.0, 1.0], [0.002, 0.0008], n_pop=1000.0, i0=10.0)
    n = 4000
    mix = ou.functional_mixture(q, sis.gamma, sis.beta, 10_000, streams.substream(seed, 1))
    pred_draws = mix.draw(100_000, streams.substream(seed, 2))
    h50 = np.array(
        [1.0 / appmodels.sis_simulate(sis, 50.0, [50.0], g).infected[0] for g in _spawn(seed, 3, n)]
    )
    ok_intervals = True
    details = []
    for a, b in [(0.0, 0.0021), (0.0021, 0.0028), (0.0028, 0.01)]:
        pred = float(np.mean((pred_draws > a) & (pred_draws < b)))
        emp = float(np.mean((h50 > a) & (h50 < b)))
        se = sqrt(emp * (1 - emp) / n) + sqrt(pred * (1 - pred) / pred_draws.size)
        ok_intervals &= abs(pred - emp) < 3 * se
        details.append(f"|{pred:.3f}-{emp:.3f}|<{3*se:.3f}")
    ok = ok_const and ok_intervals
    return CheckResult(4, "SIS stable case", "pass" if ok else "fail",
                       f"const-env |I-500|={abs(i50-500):.2g}; " + ", ".join(details))


def _check_5(seed=105) -> CheckResult:
    q = chain_mod.validate_rates(TWO_STATE_RATES)
    model = ou.OUModel.build(q, a=[-2.0, 1.0], b=[1.0, 1.0], y0=0.0)
    n = 2000
    ex = limits.regime_experiment(
        model, [100.0, 400.0], n, streams.substream(seed, 0), n_cycles=20_000, limit_draws=50_000
    )
    tol = _MARGIN * 0.05 * np.sqrt(10_000 / n)
    ok = ex.ks[-1] < tol and ex.ks_decreasing()
    return CheckResult(5, "transient sqrt(t) limit", "pass" if ok else "fail",
                       f"KS {ex.ks.round(4).tolist()} (tol {tol:.4f}, decreasing {ex.ks_decreasing()})")


def _check_6(seed=106) -> CheckResult:
    q = chain_mod.validate_rates(TWO_STATE_RATES)
    model = ou.OUModel.build(q, a=[1.0, -2.0], b=[1.0, 1.0], y0=0.0)
    n = 2000
    ex = limits.regime_experiment(
        model, [250.0, 1000.0], n, streams.substream(seed, 0), n_cycles=20_000, limit_draws=50_000
    )
    tol = _MARGIN * 0.10 * np.sqrt(10_000 / n)
    ok = ex.ks[-1] < tol and ex.ks_decreasing()
    anchors_ok = all(
        abs(ex.params.scale_sq[j] - 4.0 / 3.0) < 3 * ex.params.scale_sq_se[j] for j in range(2)
    )
    ok = ok and anchors_ok
    return CheckResult(6, "null-recurrent sqrt(t) limit", "pass" if ok else "fail",
                       f"KS {ex.ks.round(4).tolist()} (tol {tol:.4f}); "
                       f"scale^2 {ex.params.scale_sq.round(4).tolist()} vs 4/3")


def _check_7(seed=107) -> CheckResult:
    q = chain_mod.validate_rates(TWO_STATE_RATES)
    cir = appmodels.CIRModel.build(q, a=[2.0, 1.0], b=[1.0, 0.5], n_factors=2, r0=1.0)
    n = 2000
    exact = np.array(
        [appmodels.cir_simulate(cir, 10.0, [10.0], g)[1][0] for g in _spawn(seed, 0, n)]
    )
    euler = appmodels.cir_euler_reference(cir, 10.0, 2e-3, streams.substream(seed, 1), n_paths=n)
    d1, _ = ks_two_sample(exact, euler)
    samp = appmodels.cir_stationary_sampler(cir, streams.substream(seed, 2), 5000)
    draws = samp.draw(n, streams.substream(seed, 3))
    t50 = np.array(
        [appmodels.cir_simulate(cir, 50.0, [50.0], g)[1][0] for g in _spawn(seed, 4, n)]
    )
    d2, _ = ks_two_sample(draws, t50)
    q1 = chain_mod.validate_rates([[0.0]])
    cir1 = appmodels.CIRModel.build(q1, a=[1.0], b=[1.0], n_factors=2, r0=1.0)
    term1 = np.array(
        [appmodels.cir_simulate(cir1, 20.0, [20.0], g)[1][0] for g in _spawn(seed, 5, 5000)]
    )
    se = term1.std(ddof=1) / sqrt(term1.size)
    tol = _MARGIN * 0.03 * np.sqrt(10_000 / n)
    ok = d1 < tol and d2 < tol and abs(term1.mean() - 1.0) < 3 * se
    return CheckResult(7, "CIR construction", "pass" if ok else "fail",
                       f"KS euler {d1:.4f}, KS stationary {d2:.4f} (tol {tol:.4f}), "
                       f"const-env mean {term1.mean():.4f} (3SE {3*se:.4f})")


def _check_8(seed=108) -> CheckResult:
    la = np.tile([-2.0, 1.0], 50_000)
    est = sre.goldie_kesten_index(la)
    root = 0.4812118250596034  # bisection on exp(-2c) + exp(c) = 2
    ok = abs(est.nu - root) < 1e-3
    ok = ok and sre.goldie_kesten_index([-1.0, -2.0, -0.5]).nu == float("inf")
    try:
        sre.goldie_kesten_index([-1.0, 1.0])
        ok = False
        premise = "missed"
    except PremiseViolated:
        premise = "raised"
    return CheckResult(8, "Goldie-Kesten estimator", "pass" if ok else "fail",
                       f"nu_hat {est.nu:.6f} vs {root:.6f}; PremiseViolated {premise}")


def _check_9(seed=109) -> CheckResult:
    rng = streams.substream(seed, 0)
    src = sre.CallableSource(lambda n, g: sre.Pairs(a=np.full(n, 0.5), b=g.standard_normal(n)))
    n1 = 20_000
    zs = sre.sample_fixed_point(src, rng, size=n1)
    d1 = ks_one_sample(zs, lambda x: ndtr(x / sqrt(4.0 / 3.0)))
    n2 = 4000
    fw = sre.iterate_forward(src, 0.0, 200, rng, size=n2)
    bw = sre.sample_fixed_point(src, rng, size=n2)
    d2, _ = ks_two_sample(fw, bw)
    q, model = _benchmark_stable()
    cyc = sre.CycleSource(q, 0, 2.0 * model.a, model.b**2).pooled(10_000, rng)
    z = sre.sample_fixed_point(cyc, rng, size=n2)
    fresh = cyc.sample(n2, rng)
    pushed = fresh.a * z + fresh.b
    z2 = sre.sample_fixed_point(cyc, rng, size=n2)
    d3, _ = ks_two_sample(pushed, z2)
    tol1 = _MARGIN * 0.01 * np.sqrt(100_000 / n1)
    tol2 = _MARGIN * 0.02 * np.sqrt(10_000 / n2)
    ok = d1 < tol1 and d2 < tol2 and d3 < tol2
    return CheckResult(9, "perpetuity engine", "pass" if ok else "fail",
                       f"KS normal {d1:.4f} (tol {tol1:.4f}); fw/bw {d2:.4f}, "
                       f"push-through {d3:.4f} (tol {tol2:.4f})")


def _riemann_oracle(states, durations, c, d, step=1e-4) -> float:
    """Midpoint quadrature of the exponential integral; segment-aligned."""
    suffix = 0.0
    total = 0.0
    suffixes = np.concatenate([np.cumsum((c[states] * durations)[::-1])[::-1][1:], [0.0]])
    for s, dur, suf in zip(states, durations, suffixes):
        m = max(int(np.ceil(dur / step)), 1)
        h = dur / m
        mid = (np.arange(m) + 0.5) * h
        total += float(np.sum(d[s] * np.exp(-(c[s] * (dur - mid) + suf))) * h)
    return total


def _check_10(seed=110) -> CheckResult:
    rng = streams.substream(seed, 0)
    q = chain_mod.validate_rates(TWO_STATE_RATES)
    worst = 0.0
    for _ in range(30):
        n_seg = int(rng.integers(2, 8))
        states = rng.integers(0, 2, size=n_seg)
        durations = rng.uniform(0.05, 0.8, size=n_seg)
        c = rng.uniform(-1.5, 2.0, size=2)
        d = rng.uniform(-2.0, 2.0, size=2)
        path = chain_mod.ChainPath(
            initial_state=int(states[0]),
            jump_times=np.cumsum(durations)[:-1],
            states=states[1:].astype(np.int64),
            horizon=float(durations.sum()),
        )
        got = evaluate_F(path, c, d)
        want = _riemann_oracle(states, durations, c, d)
        denom = max(abs(want), 1e-9)
        worst = max(worst, abs(got - want) / denom)
    # cocycle and zero-decay continuity
    f1 = g_function(2.0, 3.0, 0.4) * np.exp(-2.0 * 0.3) + g_function(2.0, 3.0, 0.3)
    f2 = g_function(2.0, 3.0, 0.7)
    cocycle = abs(f1 - f2) / abs(f2)
    cont = abs(g_function(1e-9, 3.0, 5.0) - g_function(0.0, 3.0, 5.0))
    ok = worst < 1e-6 and cocycle < 1e-12 and cont <= 1e-9 * 3.0 * 25.0
    return CheckResult(10, "path functional exactness", "pass" if ok else "fail",
                       f"worst rel err {worst:.2e}; cocycle {cocycle:.2e}; continuity {cont:.2e}")


def _check_11(seed=111) -> CheckResult:
    import tempfile

    from .cli import main as cli_main

    cfg_text = (
        "[chain]\nstates = 1\nrates =\n\n"
        "[model]\nkind = ou\na = 1\nb = 1\ny0 = 0\n\n"
        "[run]\nhorizon = 5\nrecord = 1, 5\nreplicates = 50\nseed = 9\n"
    )
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg_path = tmp / "c.cfg"
        cfg_path.write_text(cfg_text)
        for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
            d = tmp / tag
            rc = cli_main(
                ["simulate", "--config", str(cfg_path), "--out", str(d), "--threads", str(threads)]
            )
            if rc != 0:
                return CheckResult(11, "determinism", "fail", f"exit code {rc}")
            outputs.append((d / "trajectory.csv").read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]
    return CheckResult(11, "determinism", "pass" if ok else "fail",
                       "byte-identical across reruns and thread counts" if ok else "outputs differ")


_CHECKS = [
    _check_1, _check_2, _check_3, _check_4, _check_5, _check_6,
    _check_7, _check_8, _check_9, _check_10, _check_11,
]


def run_selftest(out: Path | None = None) -> int:
    results = []
    t0 = time.perf_counter()
    for fn in _CHECKS:
        t1 = time.perf_counter()
        res = fn()
        took = time.perf_counter() - t1
        results.append(res)
        print(f"[{res.number:2d}] {res.name:<38s} {res.status.upper():<12s} "
              f"({took:5.1f} s) {res.detail}")
    total = time.perf_counter() - t0
    n_fail = sum(1 for r in results if r.status == "fail")
    print(f"selftest: {len(results) - n_fail}/{len(results)} ok in {total:.1f} s "
          f"({sum(1 for r in results if r.status == 'unattainable')} unattainable)")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "selftest.json", "w") as fh:
            json.dump(
                [{"number": r.number, "name": r.name, "status": r.status, "detail": r.detail}
                 for r in results],
                fh, indent=2,
            )
            fh.write("\n")
    return 3 if n_fail else 0
