"""Counter-based random streams keyed by (seed, replica, particle).

Every stream is a Philox generator whose key is derived from a tuple of
integers, so draws never depend on the order in which replicas or particles
are scheduled.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

MASK64 = (1 << 64) - 1

# key domains keep different uses of one seed from sharing a stream
DOMAIN_BROWNIAN = 1
DOMAIN_BRIDGE = 2
DOMAIN_STATIONARY = 3
DOMAIN_REPLICA = 4
DOMAIN_SOLVER_TEST = 5


def stream(*key: int) -> np.random.Generator:
    """Philox generator keyed by a tuple of nonnegative integers."""
    words = []
    for k in key:
        k = int(k) & MASK64
        words.extend((k & 0xFFFFFFFF, k >> 32))
    ss = np.random.SeedSequence(words)
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def replica_seed(base_seed: int, replica: int) -> int:
    """64-bit seed for replica ``replica`` as a pure function of its inputs."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, (int(base_seed) & MASK64) >> 32,
                                 DOMAIN_REPLICA, int(replica)])
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


class BrownianIncrements:
    """Chunked Brownian increments for ``n`` independent coordinates.

    Particle ``i`` draws from its own stream keyed by ``(seed, i)``.  With
    ``refine = k > 0`` the path is first drawn on the coarse grid of step
    ``dt * 2**k`` and then halved ``k`` times by Brownian bridge, each level
    using its own stream; the coarse increments therefore coincide with
    those of a ``refine = 0`` run at step ``dt * 2**k`` under the same seed.
    """

    def __init__(self, seed: int, n: int, dt: float, refine: int = 0):
        if refine < 0:
            raise ValueError("refine must be >= 0")
        self.n = n
        self.dt = dt
        self.refine = refine
        self._coarse = [stream(seed, DOMAIN_BROWNIAN, i) for i in range(n)]
        self._bridge = [[stream(seed, DOMAIN_BRIDGE, i, lev) for lev in range(refine)]
                        for i in range(n)]

    def chunks(self, steps: int, chunk: int) -> Iterator[np.ndarray]:
        """Yield ``(m, n)`` increment blocks totalling ``steps`` rows."""
        factor = 1 << self.refine
        if steps % factor:
            raise ValueError(f"step count {steps} is not divisible by 2**refine={factor}")
        chunk = max(factor, chunk - chunk % factor)
        coarse_dt = self.dt * factor
        left = steps
        while left > 0:
            m = min(chunk, left)
            mc = m // factor
            out = np.empty((m, self.n))
            for i in range(self.n):
                inc = self._coarse[i].standard_normal(mc) * np.sqrt(coarse_dt)
                h = coarse_dt
                for lev in range(self.refine):
                    h /= 2.0
                    xi = self._bridge[i][lev].standard_normal(inc.size)
                    first = 0.5 * inc + np.sqrt(h / 2.0) * xi
                    fine = np.empty(2 * inc.size)
                    fine[0::2] = first
                    fine[1::2] = inc - first
                    inc = fine
                out[:, i] = inc
            left -= m
            yield out
