"""Engine for the fixed-point equation Z =d A Z + B.

Under P[A = 0] = 0, E log|A| < 0 and E log+|B| < infinity the equation
has a unique law, realized here by truncated backward sums

    Z = B1 + A1 (B2 + A2 (B3 + ...)),

stopped once the running product |A1 ... Ak| is negligible relative to
the accumulated value.  Forward iteration of Z' = A Z + B is kept as an
independent cross-check sampler.  The same machinery drives the coupled
bivariate fixed point (M, V) = (sqrt(A) M + C, A V + B), the moment
recursion, and the Goldie-Kesten tail-index estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable, Protocol

import numpy as np

from . import chain as chain_mod
from . import pathfunc
from .errors import (
    DegenerateSource,
    MomentDiverges,
    NonContractive,
    Overflow,
    PremiseViolated,
)

__all__ = [
    "Pairs",
    "PairSource",
    "PoolSource",
    "CycleSource",
    "CallableSource",
    "constant_source",
    "SREDiagnostics",
    "diagnose",
    "sample_fixed_point",
    "iterate_forward",
    "sample_bivariate_fixed_point",
    "moment",
    "TailIndexEstimate",
    "goldie_kesten_index",
    "nu_star",
]

# Backward-sum truncation: stop when the running |A| product is below
# REL_TOL * (|Z| + 1); a cap hit means the source is not contractive.
REL_TOL = 1e-14
MAX_TERMS = 10**6


@dataclass(frozen=True)
class Pairs:
    """A batch of i.i.d. (A, B[, C]) draws.

    ``log_a`` carries exact log A for cycle-derived sources (A > 0 by
    construction there); it is None for sources defined directly in
    natural space.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray | None = None
    log_a: np.ndarray | None = None

    def log_abs_a(self) -> np.ndarray:
        if self.log_a is not None:
            return self.log_a
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.a))


class PairSource(Protocol):
    has_c: bool

    def sample(self, n: int, rng: np.random.Generator) -> Pairs: ...


class PoolSource:
    """Finite recorded pool, resampled with replacement."""

    def __init__(self, pool: Pairs):
        self._pool = pool
        self.has_c = pool.c is not None

    @property
    def pool(self) -> Pairs:
        return self._pool

    def sample(self, n: int, rng: np.random.Generator) -> Pairs:
        idx = rng.integers(0, self._pool.a.size, size=n)
        return Pairs(
            a=self._pool.a[idx],
            b=self._pool.b[idx],
            c=None if self._pool.c is None else self._pool.c[idx],
            log_a=None if self._pool.log_a is None else self._pool.log_a[idx],
        )


class CycleSource:
    """Fresh renewal cycles, mapped through the cycle functionals.

    Draws are genuinely i.i.d. (a new batch of cycles per call);
    A = e^{log A} > 0 holds by construction.
    """

    def __init__(
        self,
        q: chain_mod.RateMatrix,
        anchor: int,
        c: np.ndarray,
        d: np.ndarray,
        d2: np.ndarray | None = None,
    ):
        self.q = q
        self.anchor = anchor
        self.c = np.asarray(c, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.d2 = None if d2 is None else np.asarray(d2, dtype=float)
        self.has_c = d2 is not None

    def sample(self, n: int, rng: np.random.Generator) -> Pairs:
        cycles = chain_mod.sample_cycles(self.q, self.anchor, n, rng)
        log_a, b, cv = pathfunc.cycle_functionals(cycles, self.c, self.d, self.d2)
        return Pairs(a=np.exp(log_a), b=b, c=cv, log_a=log_a)

    def pooled(self, n: int, rng: np.random.Generator) -> PoolSource:
        """Record n cycles once and resample them thereafter."""
        return PoolSource(self.sample(n, rng))


class CallableSource:
    """Wraps fn(n, rng) -> Pairs for synthetic test sources."""

    def __init__(self, fn: Callable[[int, np.random.Generator], Pairs], has_c: bool = False):
        self._fn = fn
        self.has_c = has_c

    def sample(self, n: int, rng: np.random.Generator) -> Pairs:
        return self._fn(n, rng)


def constant_source(a: float, b: float, c: float | None = None) -> CallableSource:
    def fn(n: int, rng: np.random.Generator) -> Pairs:
        return Pairs(
            a=np.full(n, float(a)),
            b=np.full(n, float(b)),
            c=None if c is None else np.full(n, float(c)),
        )

    return CallableSource(fn, has_c=c is not None)


@dataclass(frozen=True)
class SREDiagnostics:
    """Monte Carlo check of the contraction conditions."""

    mean_log_a: float
    se_log_a: float
    mean_logplus_b: float
    se_logplus_b: float
    n_used: int
    contractive: bool


def diagnose(source: PairSource, n: int, rng: np.random.Generator) -> SREDiagnostics:
    """Estimate E log|A| and E log+|B| with standard errors.

    ``contractive`` holds when mean log|A| + 3 SE < 0.  Raises
    DegenerateSource when every draw is identical and the contraction
    test fails (a constant source that cannot converge).
    """
    if n < 100:
        raise ValueError("need n >= 100 draws")
    pairs = source.sample(n, rng)
    la = pairs.log_abs_a()
    lpb = np.log(np.maximum(np.abs(pairs.b), 1.0))
    if np.any(np.isneginf(la)):
        # P[A=0] > 0 empirically: backward sums terminate a.s.
        mean_la, se_la = float("-inf"), 0.0
    else:
        mean_la = float(np.mean(la))
        se_la = float(np.std(la, ddof=1) / np.sqrt(n))
    mean_lb = float(np.mean(lpb))
    se_lb = float(np.std(lpb, ddof=1) / np.sqrt(n))
    contractive = mean_la + 3.0 * se_la < 0.0
    identical = (
        np.all(pairs.a == pairs.a[0])
        and np.all(pairs.b == pairs.b[0])
        and (pairs.c is None or np.all(pairs.c == pairs.c[0]))
    )
    if identical and not contractive:
        raise DegenerateSource("all draws identical and E log|A| >= 0")
    return SREDiagnostics(
        mean_log_a=mean_la,
        se_log_a=se_la,
        mean_logplus_b=mean_lb,
        se_logplus_b=se_lb,
        n_used=n,
        contractive=contractive,
    )


def _backward(
    source: PairSource,
    n: int,
    rng: np.random.Generator,
    bivariate: bool,
    rel_tol: float = REL_TOL,
    max_terms: int = MAX_TERMS,
):
    z_v = np.zeros(n)
    z_m = np.zeros(n) if bivariate else None
    prod_v = np.ones(n)
    prod_m = np.ones(n) if bivariate else None
    active = np.arange(n)
    for _ in range(max_terms):
        pairs = source.sample(active.size, rng)
        z_v[active] += prod_v[active] * pairs.b
        if bivariate:
            if pairs.c is None:
                raise ValueError("bivariate sampling needs a source with C draws")
            z_m[active] += prod_m[active] * pairs.c
            prod_m[active] *= np.sqrt(pairs.a)
        prod_v[active] *= pairs.a
        done = np.abs(prod_v[active]) < rel_tol * (np.abs(z_v[active]) + 1.0)
        active = active[~done]
        if active.size == 0:
            return (z_m, z_v) if bivariate else z_v
    raise NonContractive(
        f"backward sum exceeded {max_terms} terms; E log A >= 0 or near-critical source"
    )


def sample_fixed_point(
    source: PairSource,
    rng: np.random.Generator,
    size: int | None = None,
) -> float | np.ndarray:
    """Draw from the law of Z =d A Z + B via truncated backward sums.

    The truncation bias is controlled by the running-product threshold
    (1e-14 relative); a cap hit raises NonContractive rather than
    silently truncating a near-critical source.
    """
    z = _backward(source, 1 if size is None else size, rng, bivariate=False)
    return float(z[0]) if size is None else z


def sample_bivariate_fixed_point(
    source: PairSource,
    rng: np.random.Generator,
    size: int | None = None,
) -> tuple[float, float] | tuple[np.ndarray, np.ndarray]:
    """Joint draw of (M, V) solving M =d sqrt(A) M + C, V =d A V + B.

    The same (A, B, C) triple enters both rows of each term; the
    coupling matters.  Truncation is applied to the V-row product
    (contractivity in A implies contractivity in sqrt(A)).
    """
    m, v = _backward(source, 1 if size is None else size, rng, bivariate=True)
    if size is None:
        return float(m[0]), float(v[0])
    return m, v


def iterate_forward(
    source: PairSource,
    z0: float,
    n: int,
    rng: np.random.Generator,
    size: int | None = None,
) -> float | np.ndarray:
    """n applications of Z' = A Z + B from z0 (independent cross-check sampler).

    Burn-in is the caller's choice of n.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    k = 1 if size is None else size
    z = np.full(k, float(z0))
    for _ in range(n):
        pairs = source.sample(k, rng)
        z = pairs.a * z + pairs.b
        if not np.all(np.isfinite(z)):
            raise Overflow("forward iteration overflowed")
    return float(z[0]) if size is None else z


def moment(
    source: PairSource,
    m: int,
    n: int,
    rng: np.random.Generator,
    ez_lower: list[float] | None = None,
) -> float:
    """E Z^m via the recursion built from Z =d A Z + B.

        E Z^m = (1 - E A^m)^{-1} sum_{k<m} C(m,k) E[A^k B^{m-k}] E Z^k

    Mixed moments are Monte Carlo estimates over one shared pool of n
    pairs (common random numbers across k).  Raises MomentDiverges when
    the estimate of E A^m is not credibly below 1.
    """
    if m < 1:
        raise ValueError("moment order must be >= 1")
    pairs = source.sample(n, rng)
    a, b = pairs.a, pairs.b
    ez = [1.0]
    if ez_lower is not None:
        if len(ez_lower) != m - 1:
            raise ValueError("ez_lower must list E Z^k for k = 1..m-1")
        ez += [float(v) for v in ez_lower]
    top = m if ez_lower is None else m
    start = 1 if ez_lower is None else m
    for mm in range(start, top + 1):
        with np.errstate(over="ignore"):
            am = a ** mm
        mean_am = float(np.mean(am))
        se_am = float(np.std(am, ddof=1) / np.sqrt(n)) if np.all(np.isfinite(am)) else float("inf")
        if not np.isfinite(mean_am) or mean_am >= 1.0 - 3.0 * se_am:
            raise MomentDiverges(
                f"estimated E A^{mm} = {mean_am:.6g} (SE {se_am:.2g}) is not below 1"
            )
        acc = 0.0
        for k in range(mm):
            mixed = float(np.mean((a ** k) * (b ** (mm - k))))
            acc += comb(mm, k) * mixed * ez[k]
        ez.append(acc / (1.0 - mean_am))
    return ez[m]


@dataclass(frozen=True)
class TailIndexEstimate:
    """Root of the empirical moment equation mean(A^nu) = 1.

    ``nu`` is +inf when the empirical map stays below 1 for every
    exponent up to the doubling cap (inf of an empty set).
    """

    nu: float
    n_samples: int


# Doubling cap defining the +infinity decision.
_DOUBLING_CAP = 2.0**60
_BISECT_TOL = 1e-10


def _log_phi(c: float, log_a: np.ndarray) -> float:
    """log of mean(exp(c * log_a)), evaluated stably."""
    x = c * log_a
    mx = float(np.max(x))
    return mx + float(np.log(np.mean(np.exp(x - mx)))) if np.isfinite(mx) else mx


def goldie_kesten_index(log_a_samples) -> TailIndexEstimate:
    """Smallest c > 0 with (1/n) sum_i e^{c log A_i} = 1.

    The empirical map phi is strictly convex with phi(0) = 1 and
    phi'(0) = mean(log A) < 0 (required; else PremiseViolated), so the
    root is bracketed by doubling and then bisected to 1e-10.  When all
    log A_i < 0, phi is strictly decreasing and the estimate is +inf.
    """
    la = np.asarray(log_a_samples, dtype=float).ravel()
    if la.size < 2:
        raise ValueError("need at least 2 samples")
    if not np.all(np.isfinite(la)):
        raise ValueError("log A samples must be finite")
    if float(np.mean(la)) >= 0.0:
        raise PremiseViolated("mean log A >= 0; the moment equation has no positive root")
    if np.all(la < 0.0):
        return TailIndexEstimate(nu=float("inf"), n_samples=la.size)
    hi = 1.0
    while _log_phi(hi, la) <= 0.0:
        hi *= 2.0
        if hi > _DOUBLING_CAP:
            return TailIndexEstimate(nu=float("inf"), n_samples=la.size)
    lo = 0.0
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if _log_phi(mid, la) > 0.0:
            hi = mid
        else:
            lo = mid
    return TailIndexEstimate(nu=0.5 * (lo + hi), n_samples=la.size)


def nu_star(per_state) -> float:
    """Minimum tail index across anchor states (+inf if all infinite)."""
    estimates = list(per_state.values()) if isinstance(per_state, dict) else list(per_state)
    if not estimates:
        raise ValueError("need at least one per-state estimate")
    values = [e.nu if isinstance(e, TailIndexEstimate) else float(e) for e in estimates]
    return min(values)
