"""Pool selection by posterior halving.

All three selectors keep the first state in traversal order that attains the
smallest ``|mass - 0.5|``. That state is never skipped: a state only marks
others whose gap is at least its own, and it comes earlier in the order (or
in an earlier parallel stage). So the exhaustive, the skipping and the
chunk-parallel selectors return the same pool bit for bit, including on exact
ties.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend
from .lattice import N_MAX


@dataclass(frozen=True)
class Selection:
    pool: int
    pool_mass: float
    evaluated_states: int
    skipped_states: int
    mass_reads: int

    @property
    def gap(self):
        return abs(self.pool_mass - 0.5)


class Checklist:
    """Fixed-length bit array over the ``2**n`` states, packed in uint64 words."""

    __slots__ = ("n", "words")

    def __init__(self, n, words=None):
        self.n = n
        size = max(1, (1 << n) >> 6)
        self.words = np.zeros(size, dtype=np.uint64) if words is None else words

    def __contains__(self, s):
        return bool((int(self.words[s >> 6]) >> (s & 63)) & 1)

    def add(self, s):
        self.words[s >> 6] |= np.uint64(1) << np.uint64(s & 63)

    def test_many(self, states):
        states = np.asarray(states, dtype=np.uint64)
        return ((self.words[states >> np.uint64(6)] >> (states & np.uint64(63))) & np.uint64(1)).astype(bool)

    def count(self):
        return int(np.bitwise_count(self.words).sum())

    def full(self):
        return self.count() == 1 << self.n

    def copy(self):
        return Checklist(self.n, self.words.copy())

    def __or__(self, other):
        if other.n != self.n:
            raise ValueError("checklists of different lattices")
        return Checklist(self.n, self.words | other.words)

    def __ior__(self, other):
        if other.n != self.n:
            raise ValueError("checklists of different lattices")
        self.words |= other.words
        return self


def _cardinality_schedule(n):
    """Cardinalities in visiting order: n, 0, n-1, 1, ... meeting in the middle."""
    sched = []
    hi, lo = n, 0
    while hi >= lo:
        sched.append(hi)
        if lo != hi:
            sched.append(lo)
        hi, lo = hi - 1, lo + 1
    return sched


@lru_cache(maxsize=N_MAX + 1)
def _order_array(n):
    states = np.arange(1 << n, dtype=np.uint32)
    group = np.empty(n + 1, dtype=np.int64)
    for rank, card in enumerate(_cardinality_schedule(n)):
        group[card] = rank
    order = states[np.lexsort((states, group[np.bitwise_count(states)]))]
    order.setflags(write=False)
    return order


def traversal_order(n):
    """All ``2**n`` states from the outermost cardinalities inwards.

    Groups come as n, 0, n-1, 1, ...; ascending numeric value inside a group.
    """
    if not 1 <= n <= N_MAX:
        raise ValueError(f"n must lie in 1..{N_MAX}")
    return _order_array(n)


def _fresh_checklist(n):
    check = Checklist(n)
    check.add(0)  # the empty pool is never a candidate
    return check


def _finish(state, m, evaluated, reads, check):
    skipped = check.count() - evaluated
    return Selection(int(state), float(m), int(evaluated), int(skipped), int(reads))


def _require_active(lattice):
    if lattice.n_active < 1:
        raise ValueError("selection needs at least one active subject")


def select_bha(lattice):
    """Exhaustive halving: evaluate the mass of every non-empty pool."""
    _require_active(lattice)
    n = lattice.n_active
    scratch = Checklist(n)
    state, m, _, evaluated, reads = _backend.K.scan(lattice.probs, n, _order_array(n), scratch.words, False)
    return Selection(int(state), float(m), int(evaluated), 0, int(reads))


def select_op_bha(lattice):
    """Halving with order-theoretic skipping.

    A state with mass below one half marks its whole up-set as skippable, one
    above one half its whole down-set.
    """
    _require_active(lattice)
    n = lattice.n_active
    check = _fresh_checklist(n)
    state, m, _, evaluated, reads = _backend.K.scan(lattice.probs, n, _order_array(n), check.words, True)
    return _finish(state, m, evaluated, reads, check)


def default_chunk_size(n, exponent_offset=8):
    return min(1 << (n // 2 + exponent_offset), 1 << n)


def _sort_key(m, rank):
    return (abs(m - 0.5), rank)


def _resolve_workers(worker_count):
    return worker_count if worker_count > 0 else (os.cpu_count() or 1)


def select_op_bha_parallel(lattice, chunk_size=None, worker_count=1, chunk_exponent_offset=8, executor=None):
    """Op-BHA over staged chunks of candidates.

    Each stage takes the next ``chunk_size`` unevaluated states in traversal
    order, deals them round-robin to the workers, and lets every worker scan
    its share against a private copy of the checklist. The copies are merged
    by bitwise OR and the stage winner is reduced by the selection order.
    Workers do not see each other's marks within a stage, so some states may
    be evaluated more than once in total.
    """
    _require_active(lattice)
    n = lattice.n_active
    workers = _resolve_workers(worker_count)
    if chunk_size is None:
        chunk_size = default_chunk_size(n, chunk_exponent_offset)
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    order = _order_array(n)
    probs = lattice.probs
    check = _fresh_checklist(n)
    best = None
    evaluated = reads = 0
    cursor = 0
    stage = 0

    def work(share):
        local = check.copy()
        result = _backend.K.scan(probs, n, share, local.words, True)
        return local, result

    own_pool = None
    if workers > 1 and executor is None:
        own_pool = executor = ThreadPoolExecutor(max_workers=workers)
    try:
        while cursor < order.shape[0]:
            rest = order[cursor:]
            open_pos = np.flatnonzero(~check.test_many(rest))
            if open_pos.shape[0] == 0:
                break
            taken = open_pos[:chunk_size]
            chunk = rest[taken]
            cursor += int(taken[-1]) + 1
            width = min(workers, chunk.shape[0])
            shares = [np.ascontiguousarray(chunk[i::width]) for i in range(width)]
            if len(shares) > 1 and executor is not None:
                outcomes = list(executor.map(work, shares))
            else:
                outcomes = [work(share) for share in shares]
            merged = check.copy()
            for i, (local, (state, m, pos, ev, rd)) in enumerate(outcomes):
                merged |= local
                evaluated += ev
                reads += rd
                if pos < 0:
                    continue
                key = _sort_key(m, (stage, i + pos * width))
                if best is None or key < best[0]:
                    best = (key, state, m)
            check = merged
            stage += 1
    finally:
        if own_pool is not None:
            own_pool.shutdown()
    _, state, m = best
    return _finish(state, m, evaluated, reads, check)


def select(lattice, worker_count=1, chunk_exponent_offset=8, executor=None):
    """Op-BHA, staged across threads when more than one worker is requested."""
    if _resolve_workers(worker_count) == 1 and executor is None:
        return select_op_bha(lattice)
    return select_op_bha_parallel(
        lattice, worker_count=worker_count, chunk_exponent_offset=chunk_exponent_offset, executor=executor
    )
