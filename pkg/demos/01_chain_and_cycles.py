"""Environment chain basics: stationary law, exact paths, renewal cycles.

A two-state chain with rates 1 (0 -> 1) and 2 (1 -> 0) spends two
thirds of its time in state 0.  Anchoring at a state splits any path
into i.i.d. cycles whose mean length is the sum of the two exponential
sojourn means.
"""

import numpy as np

from ouswitch import chain

q = chain.validate_rates([[0.0, 1.0], [2.0, 0.0]])
pi = chain.stationary_distribution(q)
print("generator:\n", q.rates)
print("stationary pi:", pi, "(exact: 2/3, 1/3)")

rng = np.random.default_rng(1)
path = chain.simulate_path(q, initial=0, horizon=10_000.0, rng=rng)
occ = path.occupation_times(2) / path.horizon
print(f"\npath with {path.n_jumps} jumps; occupation fractions {occ.round(4)}")

cycles = chain.decompose_cycles(path, anchor=0)
lengths = cycles.lengths()
print(f"\n{cycles.n_cycles} complete cycles at anchor 0")
print(f"mean cycle length {lengths.mean():.4f} (theory 1/1 + 1/2 = 1.5)")
print(f"mean anchor sojourn {cycles.anchor_sojourns().mean():.4f} (theory 1.0)")

fresh = chain.sample_cycles(q, anchor=1, count=100_000, rng=rng)
print(f"\nsampled cycles at anchor 1: mean length {fresh.lengths().mean():.4f} (theory 1.5)")
