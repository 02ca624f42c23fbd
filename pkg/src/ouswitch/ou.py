"""The switching Ornstein-Uhlenbeck model.

The process solves dY = (c(X) - a(X) Y) dt + b(X) dW for a finite-state
chain X (the plain mean-reverting case is c = 0).  Conditionally on the
chain path, Y is Gaussian on every constant-state segment with

    mean(dt) = y e^{-a dt} + G(a, c, dt),
    var(dt)  = G(2a, b^2, dt),

so simulation is exact per segment: Monte Carlo error is the only
approximation anywhere, never time-stepping.

When E_pi a > 0 the process has a stationary law equal to a scale
mixture of Gaussians: draw a state j from pi, an independent variance

    V_j = G(2a_j, b_j^2, T) + e^{-2 a_j T} V*_j,   T ~ Exp(exit rate of j),

with V*_j the fixed point of V =d A V + B for the per-cycle pair
A = e^{-2 int a}, B = int b^2 e^{-2 suffix int a}, and return sqrt(V) N.
A nonzero offset c adds an independent location term M_j built the same
way from the coupled bivariate fixed point.  ``stationary_sampler``
realizes this construction; V*-pools are built once per state and
resampled (the documented approximation to the true i.i.d. source).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, log, sqrt

import numpy as np

from . import chain as chain_mod
from . import pathfunc, sre
from .chain import ChainPath, RateMatrix, as_state_table
from .errors import NonContractive, NotStable, MomentDiverges
from .pathfunc import g_scalar

__all__ = [
    "OUModel",
    "transition_moments",
    "exact_step",
    "simulate",
    "log_abs_terminal",
    "FunctionalMixture",
    "functional_mixture",
    "StationaryMixture",
    "stationary_sampler",
    "stationary_moment",
    "tail_bounds",
]

_SQRT2PI = np.sqrt(2.0 * np.pi)
# Rescale thresholds for the log-tracked simulation path.
_RESCALE_LOG = 512.0
_RESCALE = np.exp(_RESCALE_LOG)


@dataclass(frozen=True)
class OUModel:
    """Chain plus per-state (a, b, c) coefficient tables and Y_0."""

    chain: RateMatrix
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    y0: float = 0.0

    @staticmethod
    def build(chain: RateMatrix, a, b, c=None, y0: float = 0.0) -> "OUModel":
        n = chain.n_states
        return OUModel(
            chain=chain,
            a=as_state_table(a, n, "a"),
            b=as_state_table(b, n, "b"),
            c=as_state_table(np.zeros(n) if c is None else c, n, "c"),
            y0=float(y0),
        )

    @property
    def has_offset(self) -> bool:
        return bool(np.any(self.c != 0.0))

    def e_pi_a(self) -> float:
        pi = chain_mod.stationary_distribution(self.chain)
        return float(pi @ self.a)


def transition_moments(y: float, state: int, dt: float, model: OUModel) -> tuple[float, float]:
    """Exact conditional (mean, variance) of Y after dt in a fixed state."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    aj = float(model.a[state])
    mean = y * exp(-aj * dt) + g_scalar(aj, float(model.c[state]), dt)
    var = g_scalar(2.0 * aj, float(model.b[state]) ** 2, dt)
    return mean, var


def exact_step(
    y: float, state: int, dt: float, model: OUModel, rng: np.random.Generator
) -> float:
    """Draw Y_{t+dt} | Y_t = y exactly on a constant-state segment."""
    mean, var = transition_moments(y, state, dt, model)
    return mean + sqrt(var) * rng.standard_normal()


def _tables(model: OUModel) -> tuple[list, list, list]:
    return model.a.tolist(), (model.b.astype(float) ** 2).tolist(), model.c.tolist()


def simulate(
    model: OUModel,
    horizon: float,
    record_at,
    rng: np.random.Generator,
    initial_state: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate (Y, X) and record at the requested times.

    Returns (times, y_values, states) with entries ordered like
    ``record_at``.  The chain is simulated event-by-event and Y advances
    by exact conditional Gaussian steps across segment boundaries and
    record points.
    """
    record_at = np.asarray(record_at, dtype=float)
    if record_at.size and (record_at.min() < 0 or record_at.max() > horizon):
        raise ValueError("record times must lie in [0, horizon]")
    path = chain_mod.simulate_path(model.chain, initial_state, horizon, rng)
    order = np.argsort(record_at, kind="stable")
    ys = np.empty(record_at.size)
    xs = np.empty(record_at.size, dtype=np.int64)
    seg_states = path.segments()[0].tolist()
    bounds = np.concatenate([[0.0], path.jump_times, [horizon]]).tolist()
    a, b2, c = _tables(model)
    buf = chain_mod._DrawBuffer(rng)
    n_seg = len(seg_states)
    y = model.y0
    t = 0.0
    seg = 0
    for idx in order:
        target = record_at[idx]
        # X is right continuous: a record exactly at a jump sees the new state
        while seg < n_seg - 1 and bounds[seg + 1] <= target:
            s = seg_states[seg]
            dt = bounds[seg + 1] - t
            y = y * exp(-a[s] * dt) + g_scalar(a[s], c[s], dt) + sqrt(
                g_scalar(2.0 * a[s], b2[s], dt)
            ) * buf.normal()
            t = bounds[seg + 1]
            seg += 1
        s = seg_states[seg]
        dt = target - t
        y = y * exp(-a[s] * dt) + g_scalar(a[s], c[s], dt) + sqrt(
            g_scalar(2.0 * a[s], b2[s], dt)
        ) * buf.normal()
        t = target
        ys[idx] = y
        xs[idx] = s
    return record_at.copy(), ys, xs


def log_abs_terminal(
    model: OUModel,
    times,
    rng: np.random.Generator,
    initial_state: int = 0,
) -> np.ndarray:
    """log |Y_t| at each grid time, robust to exponential growth.

    Carries Y as value * e^shift with periodic rescaling so paths in the
    divergent regimes never overflow; noise contributions below the
    representable relative scale underflow harmlessly to zero.
    """
    times_arr = np.sort(np.asarray(times, dtype=float))
    if times_arr.size == 0 or times_arr[0] <= 0:
        raise ValueError("grid times must be positive")
    times = times_arr.tolist()
    n_times = len(times)
    exit_rates, cum = model.chain._exit_list, model.chain._cum_rows
    a, b2, c = _tables(model)
    buf = chain_mod._DrawBuffer(rng, block=4096)
    out = np.empty(n_times)
    y = model.y0
    shift = 0.0
    t = 0.0
    s = initial_state
    k = 0
    inf = float("inf")
    while k < n_times:
        r = exit_rates[s]
        t_jump = t + buf.exponential() / r if r > 0.0 else inf
        while k < n_times and times[k] <= t_jump:
            y, shift = _scaled_step(y, shift, s, times[k] - t, a, b2, c, buf)
            t = times[k]
            out[k] = log(abs(y)) + shift if y != 0.0 else -inf
            k += 1
        if k >= n_times:
            break
        y, shift = _scaled_step(y, shift, s, t_jump - t, a, b2, c, buf)
        t = t_jump
        s = chain_mod._pick_state(cum[s], buf.uniform())
    return out


def _scaled_step(y, shift, s, dt, a, b2, c, buf):
    """Exact Gaussian step in (value, log-shift) representation.

    Long segments are split so per-substep factors stay representable
    (exact by the cocycle property of the conditional Gaussian).  Noise
    below the representable relative scale of e^shift underflows to
    zero, which is exactly the regime where it is negligible.
    """
    n_sub = int(abs(a[s]) * dt / 80.0) + 1
    h = dt / n_sub
    for _ in range(n_sub):
        y, shift = _scaled_substep(y, shift, s, h, a, b2, c, buf)
    return y, shift


def _scaled_substep(y, shift, s, dt, a, b2, c, buf):
    noise = g_scalar(a[s], c[s], dt) + sqrt(g_scalar(2.0 * a[s], b2[s], dt)) * buf.normal()
    try:
        y = exp(-a[s] * dt) * y + noise * exp(-shift)
    except OverflowError:
        # shift <= -709: the carried value is below e^{-200} absolute, so
        # the fresh O(1) noise dominates; re-base the representation on it
        y, shift = noise, 0.0
    mag = abs(y)
    if mag > _RESCALE:
        return y / _RESCALE, shift + _RESCALE_LOG
    if 0.0 < mag < 1.0 / _RESCALE:
        return y * _RESCALE, shift - _RESCALE_LOG
    return y, shift


class FunctionalMixture:
    """Sampler for the long-time law of int_0^t d e^{-suffix int c}.

    Mixture over states: draw j from pi, then
    V_j = G(c_j, d_j, T) + e^{-c_j T} V*_j with T ~ Exp(exit rate of j)
    drawn fresh and V*_j resampled from a per-state fixed-point pool.
    """

    def __init__(self, pi, exit_rates, c, d, v_pools):
        self.pi = np.asarray(pi, dtype=float)
        self._exit = np.asarray(exit_rates, dtype=float)
        self._c = np.asarray(c, dtype=float)
        self._d = np.asarray(d, dtype=float)
        self._v_pools = np.asarray(v_pools, dtype=float)  # (n_states, pool)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.choice(self.pi.size, size=n, p=self.pi)
        t = rng.standard_exponential(n) / self._exit[u]
        idx = rng.integers(0, self._v_pools.shape[1], size=n)
        v_star = self._v_pools[u, idx]
        return pathfunc.g_function(self._c[u], self._d[u], t) + np.exp(-self._c[u] * t) * v_star


def _cycle_pool_source(
    q: RateMatrix,
    anchor: int,
    c,
    d,
    d2,
    n_cycles: int,
    rng: np.random.Generator,
) -> sre.PoolSource:
    source = sre.CycleSource(q, anchor, c, d, d2)
    pool = source.pooled(n_cycles, rng)
    diag = sre.diagnose(pool, min(n_cycles, 10_000), rng)
    if not diag.contractive:
        raise NonContractive(
            f"cycle source at anchor {anchor} not contractive "
            f"(mean log A = {diag.mean_log_a:.4g} +- {diag.se_log_a:.2g})"
        )
    return pool


def functional_mixture(
    q: RateMatrix,
    c,
    d,
    n_cycles: int,
    rng: np.random.Generator,
) -> FunctionalMixture:
    """Build the mixture sampler for the functional with tables (c, d).

    Requires E_pi c > 0 (positive-recurrent functional regime).
    """
    n = q.n_states
    c = as_state_table(c, n, "c")
    d = as_state_table(d, n, "d")
    pi = chain_mod.stationary_distribution(q)
    if float(pi @ c) <= 0.0:
        raise NotStable("E_pi c <= 0: no stationary law for the functional")
    if n == 1:
        # no switching: V degenerates to the fixed integral limit d/c
        pool = np.full((1, 1), d[0] / c[0])
        return FunctionalMixture(pi, np.array([np.inf]), c, d, pool)
    pools = np.empty((n, n_cycles))
    for j in range(n):
        src = _cycle_pool_source(q, j, c, d, None, n_cycles, rng)
        pools[j] = sre.sample_fixed_point(src, rng, size=n_cycles)
    return FunctionalMixture(pi, q.exit_rates, c, d, pools)


class StationaryMixture:
    """Sampler for the stationary law of the switching OU process.

    A draw is M_U + sqrt(V_U) N with U ~ pi independent of everything
    else.  Immutable once built; drawing needs only a caller stream.
    """

    def __init__(self, pi, exit_rates, a, b, c, v_pools, m_pools, closed_form=None):
        self.pi = np.asarray(pi, dtype=float)
        self._exit = exit_rates
        self._a = a
        self._b2 = None if b is None else np.asarray(b, float) ** 2
        self._c = c
        self._v_pools = v_pools
        self._m_pools = m_pools
        self._closed_form = closed_form  # (mean, sd) for the 1-state case

    @property
    def n_states(self) -> int:
        return self.pi.size

    def draw_labeled(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """(states, Y draws); states are the mixture labels U."""
        if self._closed_form is not None:
            mean, sd = self._closed_form
            return np.zeros(n, dtype=np.int64), mean + sd * rng.standard_normal(n)
        u, m, v = self._components(n, rng)
        return u, m + np.sqrt(v) * rng.standard_normal(n)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.draw_labeled(n, rng)[1]

    def draw_variance(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Mixture-weighted draws of the conditional variance V."""
        if self._closed_form is not None:
            return np.full(n, self._closed_form[1] ** 2)
        return self._components(n, rng)[2]

    def _components(self, n, rng):
        u = rng.choice(self.pi.size, size=n, p=self.pi)
        t = rng.standard_exponential(n) / self._exit[u]
        idx = rng.integers(0, self._v_pools.shape[1], size=n)
        v_star = self._v_pools[u, idx]
        a_u = self._a[u]
        with np.errstate(over="ignore"):
            v = pathfunc.g_function(2.0 * a_u, self._b2[u], t) + np.exp(-2.0 * a_u * t) * v_star
        if self._m_pools is None:
            m = np.zeros(n)
        else:
            # same T and the same pool index: the coupling of (M*, V*) matters
            m_star = self._m_pools[u, idx]
            m = pathfunc.g_function(a_u, self._c[u], t) + np.exp(-a_u * t) * m_star
        return u, m, v


def stationary_sampler(
    model: OUModel,
    n_cycles_per_state: int = 10_000,
    rng: np.random.Generator | None = None,
) -> StationaryMixture:
    """Build the stationary scale-mixture sampler.

    Requires E_pi a > 0.  For a single-state chain the renewal
    machinery is bypassed: the law is Normal(c/a, b^2/(2a)) in closed
    form.  Per state, a pool of ``n_cycles_per_state`` recorded cycles
    drives the fixed-point pools.
    """
    if rng is None:
        raise ValueError("rng is required")
    q = model.chain
    pi = chain_mod.stationary_distribution(q)
    e_pi_a = float(pi @ model.a)
    if e_pi_a <= 0.0:
        raise NotStable(f"E_pi a = {e_pi_a:.6g} <= 0: no stationary law")
    n = q.n_states
    if n == 1:
        a0, b0, c0 = model.a[0], model.b[0], model.c[0]
        return StationaryMixture(
            pi, None, None, None, None, None, None,
            closed_form=(c0 / a0, np.sqrt(b0 * b0 / (2.0 * a0))),
        )
    b2 = model.b.astype(float) ** 2
    a2 = 2.0 * model.a
    d2 = model.c if model.has_offset else None
    v_pools = np.empty((n, n_cycles_per_state))
    m_pools = np.empty((n, n_cycles_per_state)) if model.has_offset else None
    for j in range(n):
        src = _cycle_pool_source(q, j, a2, b2, d2, n_cycles_per_state, rng)
        if model.has_offset:
            m_pools[j], v_pools[j] = sre.sample_bivariate_fixed_point(
                src, rng, size=n_cycles_per_state
            )
        else:
            v_pools[j] = sre.sample_fixed_point(src, rng, size=n_cycles_per_state)
    return StationaryMixture(pi, q.exit_rates, model.a, model.b, model.c, v_pools, m_pools)


def _gauss_even_moment(m: int) -> float:
    # E N^m = (m-1)!! for even m
    out = 1.0
    for k in range(m - 1, 0, -2):
        out *= k
    return out


def stationary_moment(
    model: OUModel,
    m: int,
    n: int,
    rng: np.random.Generator,
    n_cycles: int = 10_000,
) -> float:
    """m-th stationary moment, m even, for the zero-offset model.

    Uses E Y^m = sum_j pi_j E N^m E V_j^{m/2}; the V_j moments come from
    the fixed-point moment recursion plus the binomial expansion of the
    Exp-sojourn composition V_j = B_T + A_T V*_j.  Odd moments vanish by
    symmetry when c = 0 and are not computed.
    """
    if m < 2 or m % 2 != 0:
        raise ValueError("only even moments m >= 2 are defined here")
    if model.has_offset:
        raise ValueError("moment recursion implemented for the zero-offset model only")
    q = model.chain
    pi = chain_mod.stationary_distribution(q)
    if float(pi @ model.a) <= 0.0:
        raise NotStable("stationary moments need E_pi a > 0")
    p = m // 2
    gauss = _gauss_even_moment(m)
    if q.n_states == 1:
        v = model.b[0] ** 2 / (2.0 * model.a[0])
        return gauss * v**p
    b2 = model.b.astype(float) ** 2
    total = 0.0
    from math import comb

    for j in range(q.n_states):
        aj = model.a[j]
        rate = q.exit_rates[j]
        # exact divergence test for the Exp-sojourn composition factor
        if rate + 2.0 * p * aj <= 0.0:
            raise MomentDiverges(
                f"E exp(-2 {p} a T) diverges at state {j} (exit rate {rate}, a = {aj})"
            )
        src = _cycle_pool_source(q, j, 2.0 * model.a, b2, None, n_cycles, rng)
        ev_star = [1.0] + [sre.moment(src, k, n, rng) for k in range(1, p + 1)]
        t = rng.standard_exponential(n) / rate
        a_t = np.exp(-2.0 * aj * t)
        b_t = pathfunc.g_function(2.0 * aj, b2[j], t)
        ev_j = sum(
            comb(p, k) * float(np.mean(a_t**k * b_t ** (p - k))) * ev_star[k]
            for k in range(p + 1)
        )
        total += pi[j] * ev_j
    return gauss * total


def tail_bounds(
    mix: StationaryMixture,
    t: float,
    n: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Mill's-ratio bracket for the stationary upper tail P[Y > t], c = 0.

    Conditionally on V the tail is P[N > t/sqrt(V)], so the Mill bounds
    apply at the standardized threshold r = t/sqrt(V):

        E[r phi(r) / (1 + r^2)]  <=  P[Y > t]  <=  E[phi(r) / r],

    estimated by Monte Carlo over n mixture-weighted variance draws.
    (Bounds with the unstandardized threshold t in the ratio prefactors
    are only valid when V == 1 and fail empirically otherwise.)
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    v = mix.draw_variance(n, rng)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(v > 0, t / np.sqrt(v), np.inf)
    phi = np.where(np.isfinite(r), np.exp(-0.5 * r**2) / _SQRT2PI, 0.0)
    lower = float(np.mean(np.where(phi > 0, r * phi / (1.0 + r * r), 0.0)))
    upper = float(np.mean(np.where(phi > 0, phi / r, 0.0)))
    return lower, upper
