"""Applications: switching CIR diffusion and the Markov-modulated SIS model.

CIR.  With kappa = 2a, theta = n b^2 / (2a), xi = 2b per state and
n >= 2 factors, the square-root diffusion

    dR = kappa(X)(theta(X) - R) dt + xi(X) sqrt(R) dW

is realized exactly as R = sum of n independent squared switching OU
factors that share one chain path (the Feller condition 2 kappa theta
>= xi^2 holds automatically for this parametrization).  A
full-truncation Euler scheme on the (kappa, theta, xi) form is kept
purely as a cross-check reference.

SIS.  With infection rate beta(X), recovery rate alpha(X), population
n and gamma = beta n - alpha, the deterministic logistic flow

    dI/dt = beta(X) (n - I) I - alpha(X) I

linearizes in H = 1/I, which propagates exactly per constant-state
segment: H' = e^{-gamma dt} H + G(gamma, beta, dt).  All internals work
in H; I is materialized only at record points, with explicit underflow
flags instead of silent zeros in long transient runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import chain as chain_mod
from . import limits as limits_mod
from . import ou as ou_mod
from .chain import RateMatrix, as_state_table
from .errors import NotStable, WrongRegime
from .pathfunc import g_function
from .streams import spawn

__all__ = [
    "CIRModel",
    "cir_simulate",
    "cir_euler_reference",
    "cir_stationary_sampler",
    "cir_limit_law",
    "cir_regime_experiment",
    "SISModel",
    "SISTrajectory",
    "sis_simulate",
    "sis_limit_probability",
    "sis_regime_experiment",
]

# I below exp(-_UNDERFLOW_LOG) is reported as an underflow event.
_UNDERFLOW_LOG = 700.0


@dataclass(frozen=True)
class CIRModel:
    """Sum-of-squares parametrization of the switching CIR process."""

    base: ou_mod.OUModel
    n_factors: int
    r0: float = 1.0

    @staticmethod
    def build(chain: RateMatrix, a, b, n_factors: int, r0: float = 1.0) -> "CIRModel":
        if n_factors < 2:
            raise ValueError("n_factors must be >= 2 (nonnegativity is automatic only then)")
        if r0 <= 0:
            raise ValueError("r0 must be > 0")
        base = ou_mod.OUModel.build(chain, a, b, None, y0=0.0)
        if np.any(base.a == 0.0):
            raise ValueError("CIR parametrization requires a(j) != 0 for every state")
        return CIRModel(base=base, n_factors=int(n_factors), r0=float(r0))

    @property
    def kappa(self) -> np.ndarray:
        return 2.0 * self.base.a

    @property
    def theta(self) -> np.ndarray:
        return self.n_factors * self.base.b**2 / (2.0 * self.base.a)

    @property
    def xi(self) -> np.ndarray:
        return 2.0 * self.base.b


def cir_simulate(
    model: CIRModel,
    horizon: float,
    record_at,
    rng: np.random.Generator,
    initial_state: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact simulation of R = sum_i U_i^2 on one shared chain path."""
    record_at = np.asarray(record_at, dtype=float)
    if record_at.size and (record_at.min() < 0 or record_at.max() > horizon):
        raise ValueError("record times must lie in [0, horizon]")
    path = chain_mod.simulate_path(model.base.chain, initial_state, horizon, rng)
    seg_states, seg_dur = path.segments()
    bounds = np.concatenate([[0.0], np.cumsum(seg_dur)])
    bounds[-1] = horizon
    a, b2 = model.base.a, model.base.b.astype(float) ** 2
    u = np.full(model.n_factors, np.sqrt(model.r0 / model.n_factors))
    order = np.argsort(record_at, kind="stable")
    rs = np.empty(record_at.size)
    xs = np.empty(record_at.size, dtype=np.int64)

    def step(u, s, dt):
        flow = np.exp(-a[s] * dt)
        sd = np.sqrt(g_function(2.0 * a[s], b2[s], dt))
        return flow * u + sd * rng.standard_normal(u.size)

    t = 0.0
    seg = 0
    for idx in order:
        target = record_at[idx]
        while seg < seg_states.size - 1 and bounds[seg + 1] <= target:
            u = step(u, int(seg_states[seg]), bounds[seg + 1] - t)
            t = bounds[seg + 1]
            seg += 1
        u = step(u, int(seg_states[seg]), target - t)
        t = target
        rs[idx] = float(u @ u)
        xs[idx] = seg_states[seg]
    return record_at.copy(), rs, xs


def cir_euler_reference(
    model: CIRModel,
    horizon: float,
    dt: float,
    rng: np.random.Generator,
    n_paths: int = 1,
) -> np.ndarray:
    """Full-truncation Euler terminals on the (kappa, theta, xi) SDE.

    Reference only, for cross-validating the exact construction.  The
    chain is still simulated exactly; only R is discretized.  Drift and
    diffusion are evaluated at max(R, 0) and the output is truncated at
    0, so the reference never returns negative values.
    """
    if dt > 1e-2:
        raise ValueError("reference scheme requires dt <= 1e-2")
    n_steps = int(np.ceil(horizon / dt))
    kappa, theta, xi = model.kappa, model.theta, model.xi
    # per-path exact chain paths, consumed by a vectorized time loop
    paths = [
        chain_mod.simulate_path(model.base.chain, 0, horizon, rng) for _ in range(n_paths)
    ]
    max_jumps = max(p.n_jumps for p in paths)
    jump_times = np.full((n_paths, max_jumps + 1), np.inf)
    jump_states = np.zeros((n_paths, max_jumps + 1), dtype=np.int64)
    for i, p in enumerate(paths):
        jump_times[i, : p.n_jumps] = p.jump_times
        jump_states[i, : p.n_jumps] = p.states
    state = np.zeros(n_paths, dtype=np.int64)
    ptr = np.zeros(n_paths, dtype=np.int64)
    r = np.full(n_paths, model.r0)
    t = 0.0
    sqdt = np.sqrt(dt)
    for _ in range(n_steps):
        h = min(dt, horizon - t)
        rp = np.maximum(r, 0.0)
        noise = rng.standard_normal(n_paths)
        r = r + kappa[state] * (theta[state] - rp) * h + xi[state] * np.sqrt(rp * h) * noise
        t += h
        crossed = jump_times[np.arange(n_paths), ptr] <= t
        while crossed.any():
            state[crossed] = jump_states[crossed, ptr[crossed]]
            ptr[crossed] += 1
            crossed = jump_times[np.arange(n_paths), ptr] <= t
    return np.maximum(r, 0.0)


class CIRStationarySampler:
    """R_infinity = V_U x (chi-square with n_factors df), V from the OU mixture."""

    def __init__(self, mixture: ou_mod.StationaryMixture, n_factors: int):
        self._mixture = mixture
        self.n_factors = n_factors

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        v = self._mixture.draw_variance(n, rng)
        return v * rng.chisquare(self.n_factors, size=n)


def cir_stationary_sampler(
    model: CIRModel,
    rng: np.random.Generator,
    n_cycles_per_state: int = 10_000,
) -> CIRStationarySampler:
    """Sampler for the stationary CIR law (requires E_pi kappa > 0)."""
    try:
        mixture = ou_mod.stationary_sampler(model.base, n_cycles_per_state, rng)
    except NotStable as exc:
        raise NotStable(f"E_pi kappa <= 0: {exc}") from exc
    return CIRStationarySampler(mixture, model.n_factors)


def cir_limit_law(
    model: CIRModel,
    params: limits_mod.CycleCLTParams,
    regime: str,
    use_centered: bool = True,
    shared_environment: bool = True,
) -> limits_mod.LimitLaw:
    """Mixture limit for log R_t / sqrt(t) + 2 sqrt(t) E_pi a.

    Scales are 2 sigma_j / sqrt(E|I_j|) with sigma_j the cycle deviation
    of int a; the factor 2 comes from R growing as a squared flow.

    All n factors ride one chain path, so their log-scale fluctuations
    are perfectly correlated and the limit is a single (half-)normal per
    mixture component; this is the default and it is what simulations
    reproduce.  ``shared_environment=False`` instead treats the factor
    fluctuations as independent and takes the max of n normals (or
    absolute normals), the documented alternative form; with one factor
    the two coincide.
    """
    pi = chain_mod.stationary_distribution(model.base.chain)
    if regime == limits_mod.TRANSIENT:
        kind = (
            limits_mod.MIXTURE_NORMAL if shared_environment else limits_mod.MIXTURE_NORMAL_MAXN
        )
    elif regime == limits_mod.NULL_RECURRENT:
        kind = (
            limits_mod.MIXTURE_HALFNORMAL
            if shared_environment
            else limits_mod.MIXTURE_HALFNORMAL_MAXN
        )
    else:
        raise WrongRegime("CIR limit law exists only in the divergent regimes")
    return limits_mod.limit_sampler(
        params,
        pi,
        kind,
        n_max=None if shared_environment else model.n_factors,
        use_centered=use_centered,
        scale_factor=2.0,
    )


def _cir_log_r(model: CIRModel, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """log R_t on a grid; factors share one chain path and one rescale shift."""
    q = model.base.chain
    exit_rates, cum = q.exit_rates, q._trans_cum
    a, b2 = model.base.a, model.base.b.astype(float) ** 2
    buf = chain_mod._DrawBuffer(rng, block=4096)
    out = np.empty(times.size)
    u = np.full(model.n_factors, np.sqrt(model.r0 / model.n_factors))
    shift = 0.0
    t = 0.0
    s = 0
    k = 0

    def step(u, shift, s, dt):
        # split long segments so per-substep factors stay representable
        n_sub = int(abs(a[s]) * dt / 80.0) + 1
        h = dt / n_sub
        for _ in range(n_sub):
            flow = np.exp(-a[s] * h)
            sd = np.sqrt(g_function(2.0 * a[s], b2[s], h))
            with np.errstate(under="ignore"):
                u = flow * u + sd * rng.standard_normal(u.size) * np.exp(-shift)
            mag = np.max(np.abs(u))
            if mag > ou_mod._RESCALE:
                u, shift = u / ou_mod._RESCALE, shift + ou_mod._RESCALE_LOG
            elif 0.0 < mag < 1.0 / ou_mod._RESCALE:
                u, shift = u * ou_mod._RESCALE, shift - ou_mod._RESCALE_LOG
        return u, shift

    while k < times.size:
        r = exit_rates[s]
        t_jump = t + (buf.exponential() / r) if r > 0 else np.inf
        while k < times.size and times[k] <= t_jump:
            u, shift = step(u, shift, s, times[k] - t)
            t = times[k]
            out[k] = 2.0 * shift + np.log(float(u @ u))
            k += 1
        if k >= times.size:
            break
        u, shift = step(u, shift, s, t_jump - t)
        t = t_jump
        s = int(np.searchsorted(cum[s], buf.uniform(), side="right"))
    return out


def cir_regime_experiment(
    model: CIRModel,
    t_grid,
    replicates: int,
    rng: np.random.Generator,
    n_cycles: int = 100_000,
    limit_draws: int = 100_000,
) -> limits_mod.RegimeExperiment:
    """CIR variant of the scaled-statistic experiment.

    Statistic: log R_t / sqrt(t) + 2 sqrt(t) E_pi a (the transient
    centering; zero centering in the null regime).
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    q = model.base.chain
    pi = chain_mod.stationary_distribution(q)
    regime = limits_mod.classify(model.base.a, pi)
    if regime.regime == limits_mod.STABLE:
        raise WrongRegime("CIR regime experiment requires E_pi kappa <= 0")
    params = limits_mod.cycle_clt_params(q, model.base.a, n_cycles, rng)
    law = cir_limit_law(model, params, regime.regime)
    streams = spawn(rng, replicates)
    log_r = np.empty((replicates, t_grid.size))
    for i, g in enumerate(streams):
        log_r[i] = _cir_log_r(model, t_grid, g)
    e_pi = 0.0 if regime.regime == limits_mod.NULL_RECURRENT else regime.e_pi_a
    rt = np.sqrt(t_grid)
    stats_matrix = log_r / rt + 2.0 * rt * e_pi
    draws = law.sample(limit_draws, rng)
    from .stats import ks_two_sample

    ks = np.array([ks_two_sample(stats_matrix[:, i], draws)[0] for i in range(t_grid.size)])
    return limits_mod.RegimeExperiment(
        regime=regime.regime,
        e_pi=regime.e_pi_a,
        t_grid=t_grid,
        statistics=stats_matrix,
        limit_draws=draws,
        ks=ks,
        params=params,
        law=law,
    )


@dataclass(frozen=True)
class SISModel:
    """Markov-modulated deterministic SIS epidemic."""

    chain: RateMatrix
    alpha: np.ndarray
    beta: np.ndarray
    n_pop: float
    i0: float

    @staticmethod
    def build(chain: RateMatrix, alpha, beta, n_pop: float, i0: float) -> "SISModel":
        n = chain.n_states
        if n_pop <= 0:
            raise ValueError("population size must be > 0")
        if not 0 < i0 <= n_pop:
            raise ValueError("I0 must lie in (0, n_pop]")
        return SISModel(
            chain=chain,
            alpha=as_state_table(alpha, n, "alpha"),
            beta=as_state_table(beta, n, "beta"),
            n_pop=float(n_pop),
            i0=float(i0),
        )

    @property
    def gamma(self) -> np.ndarray:
        return self.beta * self.n_pop - self.alpha


@dataclass(frozen=True)
class SISTrajectory:
    times: np.ndarray
    infected: np.ndarray
    states: np.ndarray
    underflow: np.ndarray  # True where I underflowed (reported, not silent 0)

    @property
    def n_underflow(self) -> int:
        return int(self.underflow.sum())


def sis_simulate(
    model: SISModel,
    horizon: float,
    record_at,
    rng: np.random.Generator,
    initial_state: int = 0,
) -> SISTrajectory:
    """Exact SIS trajectory at the record times.

    H = 1/I is propagated per segment in (value, log-shift) form, so the
    recursion itself never overflows; records where I falls below the
    representable range carry an underflow flag.
    """
    record_at = np.asarray(record_at, dtype=float)
    if record_at.size and (record_at.min() < 0 or record_at.max() > horizon):
        raise ValueError("record times must lie in [0, horizon]")
    from math import exp, log

    path = chain_mod.simulate_path(model.chain, initial_state, horizon, rng)
    seg_states = path.segments()[0].tolist()
    bounds = np.concatenate([[0.0], path.jump_times, [horizon]]).tolist()
    n_seg = len(seg_states)
    gamma, beta = model.gamma.tolist(), model.beta.tolist()
    order = np.argsort(record_at, kind="stable")
    infected = np.empty(record_at.size)
    xs = np.empty(record_at.size, dtype=np.int64)
    under = np.zeros(record_at.size, dtype=bool)
    h = 1.0 / model.i0
    shift = 0.0
    t = 0.0
    seg = 0
    for idx in order:
        target = record_at[idx]
        while seg < n_seg - 1 and bounds[seg + 1] <= target:
            h, shift = _sis_step(h, shift, seg_states[seg], bounds[seg + 1] - t, gamma, beta)
            t = bounds[seg + 1]
            seg += 1
        h, shift = _sis_step(h, shift, seg_states[seg], target - t, gamma, beta)
        t = target
        log_h = log(h) + shift
        if log_h > _UNDERFLOW_LOG:
            infected[idx] = 0.0
            under[idx] = True
        else:
            infected[idx] = exp(-log_h)
        xs[idx] = seg_states[seg]
    return SISTrajectory(times=record_at.copy(), infected=infected, states=xs, underflow=under)


def sis_limit_probability(
    model: SISModel,
    regime: str,
    interval: tuple[float, float],
    params: limits_mod.CycleCLTParams | None = None,
    n_draws: int = 200_000,
    n_cycles: int = 10_000,
    rng: np.random.Generator | None = None,
    mixture: ou_mod.FunctionalMixture | None = None,
) -> float:
    """Limit probabilities for the SIS trajectory, by regime of E_pi gamma.

    stable (E_pi gamma > 0):   lim P[1/I_t in (a, b)]
        by Monte Carlo under the stationary mixture of the functional
        with tables (gamma, beta).
    null (E_pi gamma = 0):     lim P[I_t in (e^{-b sqrt t}, e^{-a sqrt t})]
        = sum_j pi_j P[|N| in (a sigma_j, b sigma_j)], a >= 0 required.
    transient (E_pi gamma < 0): the same with exp(t E_pi gamma) prefactors
        and a signed normal: sum_j pi_j P[N in (a sigma_j, b sigma_j)].

    sigma_j here is the raw cycle deviation of int gamma, taken directly
    from ``params``.
    """
    a_lo, b_hi = float(interval[0]), float(interval[1])
    if not a_lo < b_hi:
        raise ValueError("interval must satisfy a < b")
    pi = chain_mod.stationary_distribution(model.chain)
    actual = limits_mod.classify(model.gamma, pi)
    if actual.regime != regime:
        raise WrongRegime(f"model is {actual.regime}, requested {regime}")
    if regime == limits_mod.STABLE:
        if rng is None:
            raise ValueError("stable case needs rng (Monte Carlo)")
        if mixture is None:
            mixture = ou_mod.functional_mixture(model.chain, model.gamma, model.beta, n_cycles, rng)
        draws = mixture.draw(n_draws, rng)
        return float(np.mean((draws > a_lo) & (draws < b_hi)))
    if params is None:
        raise ValueError("divergent cases need cycle CLT params for gamma")
    sigma = params.sigma
    if regime == limits_mod.NULL_RECURRENT:
        if a_lo < 0:
            raise ValueError("null-recurrent case requires a >= 0")
        p_half = (2.0 * ndtr(b_hi * sigma) - 1.0) - (2.0 * ndtr(a_lo * sigma) - 1.0)
        return float(pi @ p_half)
    if regime == limits_mod.TRANSIENT:
        p_norm = ndtr(b_hi * sigma) - ndtr(a_lo * sigma)
        return float(pi @ p_norm)
    raise WrongRegime(f"unknown regime {regime!r}")


def _sis_log_h(model: SISModel, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """log(1/I_t) on a grid via the scaled H recursion."""
    from math import log

    q = model.chain
    exit_rates, cum = q._exit_list, q._cum_rows
    gamma, beta = model.gamma.tolist(), model.beta.tolist()
    buf = chain_mod._DrawBuffer(rng, block=4096)
    time_list = times.tolist()
    n_times = len(time_list)
    out = np.empty(n_times)
    h = 1.0 / model.i0
    shift = 0.0
    t = 0.0
    s = 0
    k = 0
    inf = float("inf")
    while k < n_times:
        r = exit_rates[s]
        t_jump = t + buf.exponential() / r if r > 0.0 else inf
        while k < n_times and time_list[k] <= t_jump:
            h, shift = _sis_step(h, shift, s, time_list[k] - t, gamma, beta)
            t = time_list[k]
            out[k] = log(h) + shift
            k += 1
        if k >= n_times:
            break
        h, shift = _sis_step(h, shift, s, t_jump - t, gamma, beta)
        t = t_jump
        s = chain_mod._pick_state(cum[s], buf.uniform())
    return out


def _sis_step(h, shift, s, dt, gamma, beta):
    from math import exp

    from .pathfunc import g_scalar

    # split long segments so per-substep factors stay representable
    n_sub = int(abs(gamma[s]) * dt / 160.0) + 1
    step = dt / n_sub
    for _ in range(n_sub):
        try:
            h = exp(-gamma[s] * step) * h + g_scalar(gamma[s], beta[s], step) * exp(-shift)
        except OverflowError:
            h, shift = g_scalar(gamma[s], beta[s], step), 0.0
        if h > ou_mod._RESCALE:
            h, shift = h / ou_mod._RESCALE, shift + ou_mod._RESCALE_LOG
        elif 0.0 < h < 1.0 / ou_mod._RESCALE:
            h, shift = h * ou_mod._RESCALE, shift - ou_mod._RESCALE_LOG
    return h, shift


def sis_regime_experiment(
    model: SISModel,
    t_grid,
    replicates: int,
    rng: np.random.Generator,
    n_cycles: int = 100_000,
    limit_draws: int = 100_000,
) -> limits_mod.RegimeExperiment:
    """SIS variant: statistic log(1/I_t)/sqrt(t) + sqrt(t) E_pi gamma.

    The limit mixture uses the renewal-CLT scales sigma_j/sqrt(E|I_j|)
    for gamma (centered in the transient case).
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    q = model.chain
    pi = chain_mod.stationary_distribution(q)
    regime = limits_mod.classify(model.gamma, pi)
    if regime.regime == limits_mod.STABLE:
        raise WrongRegime("SIS regime experiment requires E_pi gamma <= 0")
    params = limits_mod.cycle_clt_params(q, model.gamma, n_cycles, rng)
    kind = (
        limits_mod.MIXTURE_NORMAL
        if regime.regime == limits_mod.TRANSIENT
        else limits_mod.MIXTURE_HALFNORMAL
    )
    law = limits_mod.limit_sampler(params, pi, kind, use_centered=True)
    streams = spawn(rng, replicates)
    log_h = np.empty((replicates, t_grid.size))
    for i, g in enumerate(streams):
        log_h[i] = _sis_log_h(model, t_grid, g)
    e_pi = 0.0 if regime.regime == limits_mod.NULL_RECURRENT else regime.e_pi_a
    rt = np.sqrt(t_grid)
    stats_matrix = log_h / rt + rt * e_pi
    draws = law.sample(limit_draws, rng)
    from .stats import ks_two_sample

    ks = np.array([ks_two_sample(stats_matrix[:, i], draws)[0] for i in range(t_grid.size)])
    return limits_mod.RegimeExperiment(
        regime=regime.regime,
        e_pi=regime.e_pi_a,
        t_grid=t_grid,
        statistics=stats_matrix,
        limit_draws=draws,
        ks=ks,
        params=params,
        law=law,
    )
