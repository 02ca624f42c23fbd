"""Exact piecewise-exponential path functionals.

The building block is the one-segment integral

    G(c, d, x) = int_0^x d * exp(-c (x - s)) ds
              = x d                  if c == 0
              = (d / c)(1 - e^{-xc}) otherwise,

from which every functional here is assembled in closed form per
segment; no quadrature appears anywhere in the main path.  Flows are
carried as logarithms throughout: products of many per-cycle
contractions underflow long before their logs lose accuracy, so
exponentiation is always deferred to the final step.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import expm1

import numpy as np

from .chain import ChainPath, RateMatrix, RenewalCycles, as_state_table
from .errors import Overflow

__all__ = [
    "g_function",
    "FunctionalState",
    "propagate",
    "evaluate_F",
    "CycleFunctional",
    "cycle_functional",
    "cycle_functionals",
    "FunctionalModel",
]

# Below this, the exp branch of G loses relative accuracy to cancellation;
# the second-order series is exact to ~1e-16 there.
_SERIES_THRESHOLD = 1e-8


def g_function(c, d, x):
    """One-segment exponential integral G(c, d, x); vectorized.

    Continuous across c = 0: for |c x| below 1e-8 the series
    d x (1 - cx/2 + (cx)^2/6) replaces the exp branch.
    """
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("segment duration must be >= 0")
    z = c * x
    small = np.abs(z) < _SERIES_THRESHOLD
    # avoid 0/0 in the masked-out branch
    c_safe = np.where(small, 1.0, c)
    with np.errstate(over="ignore"):
        exact = (d / c_safe) * (-np.expm1(-z))
    series = d * x * (1.0 - z / 2.0 + z * z / 6.0)
    out = np.where(small, series, exact)
    return out if out.ndim else float(out)


def g_scalar(c: float, d: float, x: float) -> float:
    """Scalar fast path of :func:`g_function` for tight loops."""
    z = c * x
    if -_SERIES_THRESHOLD < z < _SERIES_THRESHOLD:
        return d * x * (1.0 - 0.5 * z + z * z / 6.0)
    return (d / c) * (-expm1(-z))


@dataclass(frozen=True)
class FunctionalState:
    """Running value of the exponential integral and of the log-flow.

    ``f`` accumulates int_0^t d e^{-int_s^t c}; ``log_phi`` accumulates
    -int_0^t c, kept in log space (never as a raw product).
    """

    f: float = 0.0
    log_phi: float = 0.0


def propagate(
    fs: FunctionalState, state: int, dt: float, c: np.ndarray, d: np.ndarray
) -> FunctionalState:
    """Advance the functional state through one constant-state segment."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    cj = float(c[state])
    dj = float(d[state])
    with np.errstate(over="ignore"):
        f = np.exp(-cj * dt) * fs.f + g_function(cj, dj, dt)
    log_phi = fs.log_phi - cj * dt
    if not (np.isfinite(f) and np.isfinite(log_phi)):
        raise Overflow(f"functional left representable range (f={f}, log_phi={log_phi})")
    return FunctionalState(f=float(f), log_phi=float(log_phi))


def _segment_fold(
    seg_states: np.ndarray,
    seg_dur: np.ndarray,
    offsets: np.ndarray,
    c: np.ndarray,
    d: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized fold of the (log-flow, integral) recursion.

    Treats flat (states, durations) arrays split by ``offsets`` as a
    batch of independent segment groups; returns per-group
    (-int c, int d e^{-suffix int c}).
    """
    x = c[seg_states] * seg_dur
    g = g_function(c[seg_states], d[seg_states], seg_dur)
    csum = np.cumsum(x)
    starts = offsets[:-1]
    ends = offsets[1:]
    totals = csum[ends - 1] - np.where(starts > 0, csum[starts - 1], 0.0)
    # suffix of x strictly after each segment, within its group
    suffix = np.repeat(csum[ends - 1], np.diff(offsets)) - csum
    with np.errstate(over="ignore"):
        contrib = g * np.exp(-suffix)
    b = np.add.reduceat(contrib, starts)
    return -totals, b


def evaluate_F(path: ChainPath, c: np.ndarray, d: np.ndarray) -> float:
    """Exact value of int_0^T d(X_s) e^{-int_s^T c(X_r) dr} ds at T = horizon."""
    seg_states, seg_dur = path.segments()
    offsets = np.array([0, seg_states.size])
    _, b = _segment_fold(seg_states, seg_dur, offsets, c, d)
    f = float(b[0])
    if not np.isfinite(f):
        raise Overflow("exponential integral overflowed; explosive parameters")
    return f


@dataclass(frozen=True)
class CycleFunctional:
    """Per-cycle triple feeding the stochastic recurrence engine.

    log_a = -int_cycle c;  b = int_cycle d e^{-suffix int c};
    c_value (optional) = int_cycle d2 e^{-(1/2) suffix int c}.
    """

    log_a: float
    b: float
    c_value: float | None = None


def cycle_functional(
    cycle: tuple[np.ndarray, np.ndarray] | list[tuple[int, float]],
    c: np.ndarray,
    d: np.ndarray,
    d2: np.ndarray | None = None,
) -> CycleFunctional:
    """Evaluate one cycle's functional triple.

    ``cycle`` is either a (states, durations) array pair or a list of
    (state, duration) segments.
    """
    if isinstance(cycle, tuple) and len(cycle) == 2 and hasattr(cycle[0], "ndim"):
        states, durations = cycle
    else:
        states = np.array([s for s, _ in cycle], dtype=np.int64)
        durations = np.array([t for _, t in cycle], dtype=float)
    if states.size == 0:
        raise ValueError("cycle must be nonempty")
    offsets = np.array([0, states.size])
    log_a, b = _segment_fold(states, durations, offsets, np.asarray(c, float), np.asarray(d, float))
    cv = None
    if d2 is not None:
        _, cb = _segment_fold(states, durations, offsets, np.asarray(c, float) / 2.0, np.asarray(d2, float))
        cv = float(cb[0])
    out = CycleFunctional(log_a=float(log_a[0]), b=float(b[0]), c_value=cv)
    if not np.isfinite(out.log_a) or not np.isfinite(out.b):
        raise Overflow("cycle functional overflowed")
    return out


def cycle_functionals(
    cycles: RenewalCycles,
    c: np.ndarray,
    d: np.ndarray,
    d2: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Vectorized (log_a, b[, c]) over every cycle in the batch."""
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    log_a, b = _segment_fold(cycles.states, cycles.durations, cycles.offsets, c, d)
    cv = None
    if d2 is not None:
        _, cv = _segment_fold(cycles.states, cycles.durations, cycles.offsets, c / 2.0, np.asarray(d2, float))
        if not np.all(np.isfinite(cv)):
            raise Overflow("cycle functionals overflowed")
    if not (np.all(np.isfinite(log_a)) and np.all(np.isfinite(b))):
        raise Overflow("cycle functionals overflowed")
    return log_a, b, cv


@dataclass(frozen=True)
class FunctionalModel:
    """Chain plus (decay, integrand) tables defining the process F_t."""

    chain: RateMatrix
    c: np.ndarray
    d: np.ndarray

    @staticmethod
    def build(chain: RateMatrix, c, d) -> "FunctionalModel":
        n = chain.n_states
        return FunctionalModel(
            chain=chain,
            c=as_state_table(c, n, "c"),
            d=as_state_table(d, n, "d"),
        )


def functional_trajectory(
    model: FunctionalModel,
    path: ChainPath,
    record_at: np.ndarray,
) -> np.ndarray:
    """F_t at each record time along a given chain path (exact fold)."""
    record_at = np.asarray(record_at, dtype=float)
    if record_at.size and (record_at.min() < 0 or record_at.max() > path.horizon):
        raise ValueError("record times must lie in [0, horizon]")
    order = np.argsort(record_at, kind="stable")
    out = np.empty(record_at.size)
    seg_states, seg_dur = path.segments()
    bounds = np.concatenate([[0.0], np.cumsum(seg_dur)])
    fs = FunctionalState()
    t = 0.0
    seg = 0
    for idx in order:
        target = record_at[idx]
        while seg < seg_states.size and bounds[seg + 1] < target:
            fs = propagate(fs, int(seg_states[seg]), bounds[seg + 1] - t, model.c, model.d)
            t = bounds[seg + 1]
            seg += 1
        here = propagate(fs, int(seg_states[min(seg, seg_states.size - 1)]), target - t, model.c, model.d)
        fs, t = here, target
        out[idx] = here.f
    return out
