"""Finite-state continuous-time Markov chain engine.

Provides generator-matrix validation, the stationary distribution,
exact event-driven (Gillespie) path simulation, and the decomposition of
paths into renewal cycles anchored at a chosen state.  All simulation is
exact in distribution: holding times are exponential with the exit rate
of the current state and there is no time discretization anywhere.

The chain state space is a finite index set 0..n-1.  Countable state
spaces are supported only through truncation to finite n; every
construction here is per-state, so this is an interface restriction
rather than a change to any formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NegativeRate,
    NoCompleteCycle,
    NonFinite,
    Reducible,
    SingularSystem,
)

__all__ = [
    "RateMatrix",
    "ChainPath",
    "RenewalCycles",
    "validate_rates",
    "stationary_distribution",
    "simulate_path",
    "decompose_cycles",
    "sample_cycles",
    "as_state_table",
]


@dataclass(frozen=True)
class RateMatrix:
    """Validated CTMC generator.

    ``rates[i, j]`` for i != j is the jump rate i -> j; the diagonal is
    always the computed row-sum complement (never user-supplied).
    Immutable after construction and safe to share across threads.
    """

    rates: np.ndarray
    exit_rates: np.ndarray = field(repr=False)
    _trans_cum: np.ndarray = field(repr=False)
    # Python-native copies for tight scalar loops
    _exit_list: tuple = field(repr=False)
    _cum_rows: tuple = field(repr=False)

    @property
    def n_states(self) -> int:
        return self.rates.shape[0]


def validate_rates(raw) -> RateMatrix:
    """Validate an n x n rate table and complete its diagonal.

    Off-diagonal entries must be finite and >= 0; input diagonal entries
    are ignored and recomputed as negative row sums.  For n >= 2 the
    positive-rate digraph must be strongly connected (irreducible chain;
    ergodicity then follows for finite chains).
    """
    q = np.array(raw, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError("rate table must be square")
    n = q.shape[0]
    if n < 1:
        raise ValueError("need at least one state")
    off = ~np.eye(n, dtype=bool)
    if not np.all(np.isfinite(q[off])):
        raise NonFinite("off-diagonal rates must be finite")
    if np.any(q[off] < 0.0):
        raise NegativeRate("off-diagonal rates must be >= 0")
    q[~off] = 0.0
    exit_rates = q.sum(axis=1)
    np.fill_diagonal(q, -exit_rates)
    if n >= 2 and not _strongly_connected(q):
        raise Reducible("positive-rate digraph is not strongly connected")
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(off, q, 0.0) / np.where(exit_rates > 0, exit_rates, 1.0)[:, None]
    cum = np.cumsum(probs, axis=1)
    q.setflags(write=False)
    exit_rates.setflags(write=False)
    cum.setflags(write=False)
    return RateMatrix(
        rates=q,
        exit_rates=exit_rates,
        _trans_cum=cum,
        _exit_list=tuple(exit_rates.tolist()),
        _cum_rows=tuple(tuple(row) for row in cum.tolist()),
    )


def _strongly_connected(q: np.ndarray) -> bool:
    adj = q > 0.0
    n = q.shape[0]

    def reach(a: np.ndarray) -> np.ndarray:
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = seen.copy()
        while frontier.any():
            nxt = a[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = nxt
        return seen

    return bool(reach(adj).all() and reach(adj.T).all())


def stationary_distribution(q: RateMatrix) -> np.ndarray:
    """Unique probability vector pi with pi Q = 0.

    Solved as a dense linear system with the normalization replacing one
    equation.  Raises SingularSystem if the solve fails or the result
    violates pi Q = 0 within 1e-10 per component.
    """
    n = q.n_states
    if n == 1:
        return np.ones(1)
    m = q.rates.T.copy()
    m[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"stationary solve failed: {exc}") from exc
    if np.any(pi < -1e-12):
        raise SingularSystem("stationary solve produced negative mass")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = pi @ q.rates
    if np.max(np.abs(residual)) > 1e-10:
        raise SingularSystem("pi Q = 0 violated beyond 1e-10; rates ill-conditioned")
    pi.setflags(write=False)
    return pi


def as_state_table(values, n_states: int, name: str = "table") -> np.ndarray:
    """Coerce a per-state coefficient table to a validated float vector."""
    t = np.asarray(values, dtype=float).ravel()
    if t.size != n_states:
        raise ValueError(f"{name} has {t.size} entries, chain has {n_states} states")
    if not np.all(np.isfinite(t)):
        raise NonFinite(f"{name} contains non-finite entries")
    t.setflags(write=False)
    return t


@dataclass(frozen=True)
class ChainPath:
    """One realized chain trajectory on [0, horizon].

    ``jump_times`` are strictly increasing and < horizon; ``states[k]``
    is the state entered at ``jump_times[k]``.  The path is right
    continuous: X_t for t in [jump_times[k], jump_times[k+1]) equals
    states[k].
    """

    initial_state: int
    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """(states, durations) of the piecewise-constant segments."""
        st = np.concatenate([[self.initial_state], self.states]).astype(np.int64)
        bounds = np.concatenate([[0.0], self.jump_times, [self.horizon]])
        return st, np.diff(bounds)

    def state_at(self, t: float) -> int:
        if t < 0 or t > self.horizon:
            raise ValueError("time outside [0, horizon]")
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.initial_state if k == 0 else int(self.states[k - 1])

    def occupation_times(self, n_states: int) -> np.ndarray:
        st, dur = self.segments()
        return np.bincount(st, weights=dur, minlength=n_states)


class _DrawBuffer:
    """Amortizes generator-call overhead for tight simulation loops."""

    def __init__(self, rng: np.random.Generator, block: int = 1024):
        self._rng = rng
        self._block = block
        self._exp = rng.standard_exponential(block).tolist()
        self._uni = rng.random(block).tolist()
        self._nrm = None
        self._ie = 0
        self._iu = 0
        self._in = 0

    def exponential(self) -> float:
        i = self._ie
        if i == len(self._exp):
            self._exp = self._rng.standard_exponential(self._block).tolist()
            i = 0
        self._ie = i + 1
        return self._exp[i]

    def uniform(self) -> float:
        i = self._iu
        if i == len(self._uni):
            self._uni = self._rng.random(self._block).tolist()
            i = 0
        self._iu = i + 1
        return self._uni[i]

    def normal(self) -> float:
        if self._nrm is None:
            self._nrm = self._rng.standard_normal(self._block).tolist()
        i = self._in
        if i == len(self._nrm):
            self._nrm = self._rng.standard_normal(self._block).tolist()
            i = 0
        self._in = i + 1
        return self._nrm[i]


def _pick_state(row: tuple, u: float) -> int:
    # linear scan beats searchsorted for the small state counts used here
    j = 0
    last = len(row) - 1
    while j < last and u > row[j]:
        j += 1
    return j


def simulate_path(
    q: RateMatrix, initial: int, horizon: float, rng: np.random.Generator
) -> ChainPath:
    """Exact event-driven simulation of the chain on [0, horizon].

    Holding time at state i is Exp(exit rate of i); the next state is
    chosen with probability rate(i, j) / exit(i).
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    n = q.n_states
    if not 0 <= initial < n:
        raise ValueError("initial state out of range")
    exit_rates = q._exit_list
    cum = q._cum_rows
    buf = _DrawBuffer(rng)
    times: list[float] = []
    states: list[int] = []
    t = 0.0
    s = initial
    while True:
        r = exit_rates[s]
        if r <= 0.0:
            break
        t += buf.exponential() / r
        if t >= horizon:
            break
        s = _pick_state(cum[s], buf.uniform())
        times.append(t)
        states.append(s)
    jt = np.asarray(times, dtype=float)
    st = np.asarray(states, dtype=np.int64)
    jt.setflags(write=False)
    st.setflags(write=False)
    return ChainPath(initial_state=initial, jump_times=jt, states=st, horizon=horizon)


@dataclass(frozen=True)
class RenewalCycles:
    """Complete renewal cycles anchored at one state, in ragged form.

    Cycle k occupies flat indices offsets[k]:offsets[k+1]; its first
    segment is always a sojourn at the anchor and it ends immediately
    before the next entry into the anchor.
    """

    anchor: int
    states: np.ndarray
    durations: np.ndarray
    offsets: np.ndarray

    @property
    def n_cycles(self) -> int:
        return self.offsets.size - 1

    def lengths(self) -> np.ndarray:
        """Total duration |I_k| of every cycle."""
        return np.add.reduceat(self.durations, self.offsets[:-1])

    def rewards(self, table: np.ndarray) -> np.ndarray:
        """Per-cycle integral of a per-state coefficient table."""
        return np.add.reduceat(table[self.states] * self.durations, self.offsets[:-1])

    def anchor_sojourns(self) -> np.ndarray:
        """Duration of the leading anchor sojourn of each cycle."""
        return self.durations[self.offsets[:-1]]

    def cycle(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.offsets[k], self.offsets[k + 1]
        return self.states[lo:hi], self.durations[lo:hi]

    def __iter__(self):
        for k in range(self.n_cycles):
            yield self.cycle(k)


def _cycles_from_flat(anchor, states, durations, offsets) -> RenewalCycles:
    states = np.asarray(states, dtype=np.int64)
    durations = np.asarray(durations, dtype=float)
    offsets = np.asarray(offsets, dtype=np.int64)
    for a in (states, durations, offsets):
        a.setflags(write=False)
    return RenewalCycles(anchor=int(anchor), states=states, durations=durations, offsets=offsets)


def decompose_cycles(path: ChainPath, anchor: int) -> RenewalCycles:
    """Split a path into complete cycles anchored at ``anchor``.

    The stretch before the first entry into the anchor and the trailing
    incomplete cycle are discarded, so per-cycle functionals stay
    unbiased.  If the path starts at the anchor, the first cycle starts
    at time 0.
    """
    seg_states, seg_dur = path.segments()
    entries = np.flatnonzero(seg_states == anchor)
    if entries.size < 2:
        raise NoCompleteCycle(
            f"path enters state {anchor} only {entries.size} time(s); "
            "need two entries for one complete cycle"
        )
    start, stop = entries[0], entries[-1]
    offsets = entries - start
    return _cycles_from_flat(anchor, seg_states[start:stop], seg_dur[start:stop], offsets)


def sample_cycles(
    q: RateMatrix, anchor: int, count: int, rng: np.random.Generator
) -> RenewalCycles:
    """Generate exactly ``count`` i.i.d. renewal cycles at ``anchor``.

    The chain is started at the anchor; cycles are i.i.d. by the renewal
    property regardless of the start once anchored.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n = q.n_states
    if not 0 <= anchor < n:
        raise ValueError("anchor out of range")
    if n < 2:
        raise NoCompleteCycle("a single-state chain never leaves its anchor")
    exit_rates = q._exit_list
    cum = q._cum_rows
    buf = _DrawBuffer(rng, block=4096)
    states: list[int] = []
    durations: list[float] = []
    offsets: list[int] = [0]
    s = anchor
    done = 0
    while done < count:
        states.append(s)
        durations.append(buf.exponential() / exit_rates[s])
        s = _pick_state(cum[s], buf.uniform())
        if s == anchor:
            done += 1
            offsets.append(len(states))
    return _cycles_from_flat(anchor, states, durations, offsets)
