"""Regime classification and the square-root-of-t limit laws.

The sign of E_pi a splits the model into three regimes: stable (> 0,
stationary law exists), null recurrent (= 0) and transient (< 0).  In
the divergent regimes the scaled statistic

    log|Y_t| / sqrt(t) + sqrt(t) E_pi a

converges to a mixture over states of sigma_j / sqrt(E|I_j|) times a
standard normal (transient) or its absolute value (null recurrent,
where the statistic reduces to log|Y_t|/sqrt(t) and the half-normal
enters through the Erdos-Kac maximum of partial sums).

Two per-anchor variance estimates are maintained.  ``sigma`` is the raw
standard deviation of the cycle reward int_cycle a.  ``sigma_centered``
is the deviation of int_cycle a - E_pi a * |I|, which is the scale the
renewal-reward central limit theorem actually produces; the two agree
in the null regime (E_pi a = 0) and differ in the transient one, where
empirical limits match the centered version.  Experiments therefore use
the centered scales; both are reported.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import chain as chain_mod
from . import ou as ou_mod
from .chain import RateMatrix, as_state_table
from .errors import WrongRegime, ZeroValue
from .pathfunc import FunctionalModel
from .streams import spawn

__all__ = [
    "STABLE",
    "NULL_RECURRENT",
    "TRANSIENT",
    "RegimeClass",
    "classify",
    "classify_exact",
    "CycleCLTParams",
    "cycle_clt_params",
    "scaled_log_statistic",
    "LimitLaw",
    "limit_sampler",
    "RegimeExperiment",
    "regime_experiment",
]

STABLE = "stable"
NULL_RECURRENT = "null_recurrent"
TRANSIENT = "transient"

# The null regime is a measure-zero specification: declared exactly for
# rational inputs, else within this tolerance.
_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class RegimeClass:
    e_pi_a: float
    regime: str
    exact: bool = False


def classify(a, pi) -> RegimeClass:
    """Regime from the sign of E_pi a, with the 1e-12 zero tolerance."""
    a = np.asarray(a, dtype=float)
    pi = np.asarray(pi, dtype=float)
    e = float(pi @ a)
    if abs(e) < _ZERO_TOL:
        return RegimeClass(e_pi_a=e, regime=NULL_RECURRENT)
    return RegimeClass(e_pi_a=e, regime=STABLE if e > 0 else TRANSIENT)


def exact_stationary(rates: list[list[Fraction]]) -> list[Fraction]:
    """Stationary distribution in exact rational arithmetic.

    ``rates`` is the full off-diagonal table (diagonal entries ignored).
    """
    n = len(rates)
    if n == 1:
        return [Fraction(1)]
    q = [[Fraction(rates[i][j]) if i != j else Fraction(0) for j in range(n)] for i in range(n)]
    for i in range(n):
        q[i][i] = -sum(q[i][j] for j in range(n) if j != i)
    # solve pi Q = 0, sum pi = 1: rows are Q^T with the last replaced by ones
    m = [[q[j][i] for j in range(n)] for i in range(n)]
    m[n - 1] = [Fraction(1)] * n
    rhs = [Fraction(0)] * (n - 1) + [Fraction(1)]
    # Gaussian elimination with partial (nonzero) pivoting over Q
    for col in range(n):
        pivot = next((r for r in range(col, n) if m[r][col] != 0), None)
        if pivot is None:
            raise ZeroDivisionError("singular rational system")
        m[col], m[pivot] = m[pivot], m[col]
        rhs[col], rhs[pivot] = rhs[pivot], rhs[col]
        inv = m[col][col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / inv
                for cc in range(col, n):
                    m[r][cc] -= f * m[col][cc]
                rhs[r] -= f * rhs[col]
    return [rhs[i] / m[i][i] for i in range(n)]


def classify_exact(a: list[Fraction], rates: list[list[Fraction]]) -> RegimeClass:
    """Regime decided in exact arithmetic from rational rates and table."""
    pi = exact_stationary(rates)
    e = sum(p * Fraction(v) for p, v in zip(pi, a))
    if e == 0:
        regime = NULL_RECURRENT
    else:
        regime = STABLE if e > 0 else TRANSIENT
    return RegimeClass(e_pi_a=float(e), regime=regime, exact=True)


@dataclass(frozen=True)
class CycleCLTParams:
    """Per-anchor renewal-cycle CLT quantities with jackknife SEs.

    Arrays are indexed by anchor state.  ``scale`` = sigma/sqrt(mean
    cycle length); the ``centered`` variants subtract E_pi a * |I| from
    the cycle reward first.
    """

    n_cycles: int
    e_pi: float
    sigma: np.ndarray
    sigma_se: np.ndarray
    mean_cycle: np.ndarray
    mean_cycle_se: np.ndarray
    scale: np.ndarray
    scale_se: np.ndarray
    scale_sq: np.ndarray
    scale_sq_se: np.ndarray
    sigma_centered: np.ndarray
    scale_centered: np.ndarray
    scale_centered_se: np.ndarray
    scale_centered_sq: np.ndarray
    scale_centered_sq_se: np.ndarray

    @property
    def n_states(self) -> int:
        return self.sigma.size


def _jackknife_scale(rewards: np.ndarray, lengths: np.ndarray):
    """(sigma, se, meanL, seL, scale, se, scale^2, se) by leave-one-out."""
    n = rewards.size
    s1, s2 = rewards.sum(), (rewards**2).sum()
    sl = lengths.sum()
    var_full = max((s2 - s1 * s1 / n) / (n - 1), 0.0)
    sigma = np.sqrt(var_full)
    mean_l = sl / n
    scale_sq = var_full / mean_l
    # leave-one-out replicates, all O(n)
    m = n - 1
    mean_i = (s1 - rewards) / m
    var_i = np.maximum((s2 - rewards**2 - m * mean_i**2) / (m - 1), 0.0)
    sig_i = np.sqrt(var_i)
    len_i = (sl - lengths) / m
    ssq_i = var_i / len_i

    def jse(theta_i):
        return float(np.sqrt((n - 1) / n * ((theta_i - theta_i.mean()) ** 2).sum()))

    return (
        float(sigma),
        jse(sig_i),
        float(mean_l),
        jse(len_i),
        float(np.sqrt(scale_sq)),
        jse(np.sqrt(ssq_i)),
        float(scale_sq),
        jse(ssq_i),
    )


def cycle_clt_params(
    q: RateMatrix,
    a,
    n_cycles: int,
    rng: np.random.Generator,
    anchors=None,
) -> CycleCLTParams:
    """Estimate sigma_j, E|I_j| and the CLT scales for every anchor."""
    if n_cycles < 100:
        raise ValueError("need at least 100 cycles")
    n = q.n_states
    a = as_state_table(a, n, "a")
    pi = chain_mod.stationary_distribution(q)
    e_pi = float(pi @ a)
    anchors = range(n) if anchors is None else anchors
    fields = {k: np.zeros(n) for k in (
        "sigma", "sigma_se", "mean_cycle", "mean_cycle_se",
        "scale", "scale_se", "scale_sq", "scale_sq_se",
        "sigma_centered", "scale_centered", "scale_centered_se",
        "scale_centered_sq", "scale_centered_sq_se",
    )}
    for j in anchors:
        cycles = chain_mod.sample_cycles(q, j, n_cycles, rng)
        rewards = cycles.rewards(a)
        lengths = cycles.lengths()
        (fields["sigma"][j], fields["sigma_se"][j],
         fields["mean_cycle"][j], fields["mean_cycle_se"][j],
         fields["scale"][j], fields["scale_se"][j],
         fields["scale_sq"][j], fields["scale_sq_se"][j]) = _jackknife_scale(rewards, lengths)
        centered = rewards - e_pi * lengths
        (fields["sigma_centered"][j], _,
         _, _,
         fields["scale_centered"][j], fields["scale_centered_se"][j],
         fields["scale_centered_sq"][j], fields["scale_centered_sq_se"][j]) = _jackknife_scale(
            centered, lengths
        )
    return CycleCLTParams(n_cycles=n_cycles, e_pi=e_pi, **fields)


def scaled_log_statistic(pairs, e_pi_a: float) -> np.ndarray:
    """log|v| / sqrt(t) + sqrt(t) e_pi_a for each (t, v) pair.

    The null-recurrent statistic is the e_pi_a = 0 specialization.
    Raises ZeroValue if any value is exactly 0 (log undefined; the
    simulation was degenerate).
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("expected a list of (t, value) pairs")
    t, v = arr[:, 0], np.abs(arr[:, 1])
    if np.any(t <= 0):
        raise ValueError("times must be > 0")
    if np.any(v == 0.0):
        raise ZeroValue("zero value encountered; log statistic undefined")
    rt = np.sqrt(t)
    return np.log(v) / rt + rt * e_pi_a


MIXTURE_NORMAL = "mixture_normal"
MIXTURE_HALFNORMAL = "mixture_halfnormal"
MIXTURE_NORMAL_MAXN = "mixture_normal_maxn"
MIXTURE_HALFNORMAL_MAXN = "mixture_halfnormal_maxn"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class LimitLaw:
    """Sampleable mixture limit: draw U ~ pi, then scale_U x (normal
    functional); the max-of-n kinds take the max of n i.i.d. normals
    (or absolute normals) before scaling."""

    kind: str
    pi: np.ndarray
    scales: np.ndarray
    n_max: int | None = None

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == DEGENERATE:
            return np.zeros(n)
        u = rng.choice(self.pi.size, size=n, p=self.pi)
        if self.kind == MIXTURE_NORMAL:
            core = rng.standard_normal(n)
        elif self.kind == MIXTURE_HALFNORMAL:
            core = np.abs(rng.standard_normal(n))
        elif self.kind == MIXTURE_NORMAL_MAXN:
            core = rng.standard_normal((n, self.n_max)).max(axis=1)
        elif self.kind == MIXTURE_HALFNORMAL_MAXN:
            core = np.abs(rng.standard_normal((n, self.n_max))).max(axis=1)
        else:
            raise ValueError(f"unknown limit-law kind {self.kind!r}")
        return self.scales[u] * core


def limit_sampler(
    params: CycleCLTParams,
    pi,
    kind: str,
    n_max: int | None = None,
    use_centered: bool = False,
    scale_factor: float = 1.0,
) -> LimitLaw:
    """Assemble the mixture limit law from estimated cycle parameters.

    ``use_centered`` selects the centered renewal-reward scales (the
    empirically correct choice in the transient regime; identical to the
    raw ones in the null regime).  ``scale_factor`` premultiplies all
    scales (the sum-of-squares construction needs a factor 2).
    """
    pi = np.asarray(pi, dtype=float)
    scales = params.scale_centered if use_centered else params.scale
    scales = scale_factor * scales
    if np.all(scales == 0.0):
        return LimitLaw(kind=DEGENERATE, pi=pi, scales=scales, n_max=n_max)
    if kind in (MIXTURE_NORMAL_MAXN, MIXTURE_HALFNORMAL_MAXN) and (n_max is None or n_max < 1):
        raise ValueError("max-of-n law needs n_max >= 1")
    return LimitLaw(kind=kind, pi=pi, scales=scales, n_max=n_max)


@dataclass(frozen=True)
class RegimeExperiment:
    """Scaled statistics on a time grid plus a fit against the limit."""

    regime: str
    e_pi: float
    t_grid: np.ndarray
    statistics: np.ndarray  # (replicates, len(t_grid))
    limit_draws: np.ndarray
    ks: np.ndarray  # KS distance per grid time
    params: CycleCLTParams
    law: LimitLaw

    def ks_decreasing(self) -> bool:
        return bool(self.ks[-1] < self.ks[0])


def _statistic_matrix(log_abs: np.ndarray, t_grid: np.ndarray, e_pi: float) -> np.ndarray:
    rt = np.sqrt(t_grid)
    return log_abs / rt + rt * e_pi


def regime_experiment(
    model,
    t_grid,
    replicates: int,
    rng: np.random.Generator,
    n_cycles: int = 100_000,
    limit_draws: int = 100_000,
) -> RegimeExperiment:
    """Simulate the scaled log statistic and compare to the limit law.

    ``model`` is an OUModel (statistic on |Y_t|) or a FunctionalModel
    (statistic on |F_t|).  Replicates own derived streams spawned from
    ``rng``, so results do not depend on scheduling.
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    if t_grid.size == 0:
        raise ValueError("empty time grid")
    if isinstance(model, ou_mod.OUModel):
        table = model.a
        simulate_log = lambda g: ou_mod.log_abs_terminal(model, t_grid, g)  # noqa: E731
    elif isinstance(model, FunctionalModel):
        table = model.c
        simulate_log = lambda g: _functional_log_abs(model, t_grid, g)  # noqa: E731
    else:
        raise TypeError("model must be OUModel or FunctionalModel")
    q = model.chain
    pi = chain_mod.stationary_distribution(q)
    regime = classify(table, pi)
    if regime.regime == STABLE:
        raise WrongRegime("regime experiment requires a transient or null-recurrent model")
    params = cycle_clt_params(q, table, n_cycles, rng)
    kind = MIXTURE_NORMAL if regime.regime == TRANSIENT else MIXTURE_HALFNORMAL
    law = limit_sampler(params, pi, kind, use_centered=True)
    streams = spawn(rng, replicates)
    log_abs = np.empty((replicates, t_grid.size))
    for k, g in enumerate(streams):
        log_abs[k] = simulate_log(g)
    e_pi = 0.0 if regime.regime == NULL_RECURRENT else regime.e_pi_a
    stats_matrix = _statistic_matrix(log_abs, t_grid, e_pi)
    draws = law.sample(limit_draws, rng)
    from .stats import ks_two_sample

    ks = np.array([ks_two_sample(stats_matrix[:, i], draws)[0] for i in range(t_grid.size)])
    return RegimeExperiment(
        regime=regime.regime,
        e_pi=regime.e_pi_a,
        t_grid=t_grid,
        statistics=stats_matrix,
        limit_draws=draws,
        ks=ks,
        params=params,
        law=law,
    )


def _functional_log_abs(model: FunctionalModel, times: np.ndarray, rng) -> np.ndarray:
    """log|F_t| on a grid, carried with periodic rescaling."""
    from math import exp, log

    from .chain import _DrawBuffer, _pick_state

    q = model.chain
    exit_rates, cum = q._exit_list, q._cum_rows
    c, d = model.c.tolist(), model.d.tolist()
    buf = _DrawBuffer(rng, block=4096)
    time_list = times.tolist()
    n_times = len(time_list)
    out = np.empty(n_times)
    f = 0.0
    shift = 0.0
    t = 0.0
    s = 0
    k = 0
    inf = float("inf")
    while k < n_times:
        r = exit_rates[s]
        t_jump = t + buf.exponential() / r if r > 0.0 else inf
        while k < n_times and time_list[k] <= t_jump:
            f, shift = _functional_scaled_step(f, shift, s, time_list[k] - t, c, d)
            t = time_list[k]
            out[k] = (log(abs(f)) + shift) if f != 0.0 else -inf
            k += 1
        if k >= n_times:
            break
        f, shift = _functional_scaled_step(f, shift, s, t_jump - t, c, d)
        t = t_jump
        s = _pick_state(cum[s], buf.uniform())
    return out


def _functional_scaled_step(f, shift, s, dt, c, d):
    from math import exp

    from .pathfunc import g_scalar

    # split long segments so per-substep factors stay representable
    n_sub = int(abs(c[s]) * dt / 160.0) + 1
    h = dt / n_sub
    for _ in range(n_sub):
        try:
            f = exp(-c[s] * h) * f + g_scalar(c[s], d[s], h) * exp(-shift)
        except OverflowError:
            f, shift = g_scalar(c[s], d[s], h), 0.0
        mag = abs(f)
        if mag > ou_mod._RESCALE:
            f, shift = f / ou_mod._RESCALE, shift + ou_mod._RESCALE_LOG
        elif 0.0 < mag < 1.0 / ou_mod._RESCALE:
            f, shift = f * ou_mod._RESCALE, shift - ou_mod._RESCALE_LOG
    return f, shift
