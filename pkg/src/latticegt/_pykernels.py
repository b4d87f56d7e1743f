"""Pure numpy implementations of the lattice kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Both backends sum in ascending state order and multiply factors in the same
sequence, so their outputs agree bit for bit.
"""

from functools import lru_cache

import numpy as np

BACKEND = "python"

_ONE = np.uint64(1)


@lru_cache(maxsize=8192)
def _submasks(mask):
    """All submasks of ``mask`` in ascending order (read-only int64 array)."""
    out = np.zeros(1, dtype=np.int64)
    bit = 1
    while bit <= mask:
        if mask & bit:
            out = np.concatenate((out, out + bit))
        bit <<= 1
    out.setflags(write=False)
    return out


def _seq_total(values):
    # cumsum accumulates strictly left to right; np.sum would go pairwise
    if values.shape[0] == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def build_probs(risks):
    probs = np.ones(1, dtype=np.float64)
    for r in np.asarray(risks, dtype=np.float64):
        probs = np.concatenate((probs * r, probs * (1.0 - r)))
    return probs


def mass(probs, n, s):
    full = (1 << n) - 1
    idx = s | _submasks(full & ~s)
    return _seq_total(probs[idx]), int(idx.shape[0])


def seqsum(values):
    return _seq_total(np.asarray(values, dtype=np.float64))


def weigh(probs, pool, table):
    states = np.arange(probs.shape[0], dtype=np.uint64)
    positives = np.bitwise_count(np.uint64(pool) & ~states)
    out = probs * np.asarray(table, dtype=np.float64)[positives]
    return out, _seq_total(out)


def marginalize(probs, bit):
    folded = probs.reshape(-1, 2, 1 << bit)
    return (folded[:, 0, :] + folded[:, 1, :]).ravel()


def _is_set(words, s):
    return (int(words[s >> 6]) >> (s & 63)) & 1


def _mark(words, idx):
    np.bitwise_or.at(words, idx >> 6, np.left_shift(_ONE, (idx & 63).astype(np.uint64)))


def mark_up(words, n, s):
    full = (1 << n) - 1
    _mark(words, s | _submasks(full & ~s))


def mark_down(words, n, s):
    _mark(words, _submasks(s))


def scan(probs, n, order, words, skip):
    """Evaluate candidate states of ``order`` and keep the best split.

    Returns ``(best_state, best_mass, best_pos, evaluated, reads)`` where
    ``best_pos`` indexes ``order`` (-1 when nothing was evaluated). With
    ``skip`` the checklist ``words`` is consulted and updated in place.
    """
    full = (1 << n) - 1
    best_state, best_mass, best_pos = 0, float("nan"), -1
    best_gap = float("inf")
    evaluated = reads = 0
    for pos, s in enumerate(order.tolist()):
        if s == 0:
            continue
        if skip and _is_set(words, s):
            continue
        idx = s | _submasks(full & ~s)
        m = _seq_total(probs[idx])
        reads += idx.shape[0]
        evaluated += 1
        gap = abs(m - 0.5)
        if best_pos < 0 or gap < best_gap:
            best_state, best_mass, best_pos, best_gap = s, m, pos, gap
        if skip:
            words[s >> 6] |= _ONE << np.uint64(s & 63)
            if m < 0.5:
                _mark(words, idx)
            elif m > 0.5:
                mark_down(words, n, s)
    return best_state, best_mass, best_pos, evaluated, reads
