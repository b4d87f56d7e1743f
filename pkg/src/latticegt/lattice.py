"""Bit-encoded lattice model.

A state is an integer whose set bits mark the *negative* subjects. The model
keeps the posterior over all ``2**n_active`` states in a flat float64 array
indexed by state, plus the map from bit position to the original subject id
so classified subjects can be folded out of the array.

The input subject at position ``i`` of ``n`` starts at bit ``n - 1 - i``:
with subjects A, B, C the state "A and C negative" is ``0b101 == 5``.
"""

import enum
import string
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import (
    ImpossibleResponseError,
    InactiveSubjectError,
    InvalidPriorError,
    LatticeError,
    SubjectCountError,
)
from .response import response_table

N_MAX = 26
UNDERFLOW_GUARD = 1e-300


class Outcome(enum.Enum):
    NEGATIVE = "negative"
    POSITIVE = "positive"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise LatticeError(f"response must be 'negative' or 'positive', got {value!r}") from None


@dataclass(frozen=True)
class SubjectPrior:
    subject_id: int
    risk: float

    def __post_init__(self):
        if not 0.0 < self.risk < 1.0:
            raise InvalidPriorError(f"invalid prior: risk {self.risk!r} for subject {self.subject_id} is not in (0, 1)")


@dataclass(frozen=True)
class Thresholds:
    """Posterior error bounds for committing a classification.

    A subject is committed negative once P(negative) >= 1 - upper_eps and
    positive once P(negative) <= lower_eps.
    """

    upper_eps: float = 0.001
    lower_eps: float = 0.001

    def __post_init__(self):
        for name in ("upper_eps", "lower_eps"):
            value = getattr(self, name)
            if not 0.0 < value < 0.5:
                raise LatticeError(f"{name} must lie in (0, 0.5), got {value}")


@dataclass(frozen=True)
class Commitment:
    subject_id: int
    decision: Outcome
    residual_error: float
    stage: int


def default_label(index):
    """Spreadsheet-style label: 0 -> 'A', 25 -> 'Z', 26 -> 'AA'."""
    letters = string.ascii_uppercase
    label = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        label = letters[rem] + label
    return label


class LatticeModel:
    """Posterior over the classification lattice of the active subjects."""

    __slots__ = ("probs", "bit_to_subject", "classifications", "tests_applied")

    def __init__(self, probs, bit_to_subject, classifications=None, tests_applied=0):
        self.probs = probs
        self.bit_to_subject = list(bit_to_subject)
        self.classifications = dict(classifications or {})
        self.tests_applied = tests_applied

    @property
    def n_active(self):
        return len(self.bit_to_subject)

    @property
    def top(self):
        return (1 << self.n_active) - 1

    def bit_of(self, subject_id):
        try:
            return self.bit_to_subject.index(subject_id)
        except ValueError:
            raise InactiveSubjectError(f"inactive subject: {subject_id!r}") from None

    def copy(self):
        return LatticeModel(self.probs.copy(), self.bit_to_subject, self.classifications, self.tests_applied)

    def __repr__(self):
        return f"LatticeModel(n_active={self.n_active}, committed={len(self.classifications)})"


def _n_of(lattice):
    return lattice if isinstance(lattice, int) else lattice.n_active


def build_lattice(priors):
    priors = list(priors)
    if not 1 <= len(priors) <= N_MAX:
        raise SubjectCountError(f"subject count unsupported: {len(priors)} (allowed 1..{N_MAX})")
    ids = [p.subject_id for p in priors]
    if len(set(ids)) != len(ids):
        raise LatticeError("subject ids must be distinct")
    for p in priors:
        if not 0.0 < p.risk < 1.0:
            raise InvalidPriorError(f"invalid prior: risk {p.risk!r} for subject {p.subject_id}")
    by_bit = priors[::-1]
    probs = _backend.K.build_probs(np.array([p.risk for p in by_bit], dtype=np.float64))
    probs /= _backend.K.seqsum(probs)
    return LatticeModel(probs, [p.subject_id for p in by_bit])


def encode_state(negative_subjects, lattice):
    state = 0
    for sid in negative_subjects:
        state |= 1 << lattice.bit_of(sid)
    return state


def decode_state(state, lattice):
    return {sid for b, sid in enumerate(lattice.bit_to_subject) if state >> b & 1}


def contains(a, b):
    """True when state ``a`` lies in the up-set of ``b``."""
    return (a & b) == b


def enumerate_up_set(s, lattice):
    """States containing ``s``, generated from subsets of the absent subjects.

    Absent subjects are taken in label order (highest bit first), so for
    subjects A, B, C the up-set of C comes out as C, AC, BC, ABC.
    """
    n = _n_of(lattice)
    absent = [1 << b for b in range(n - 1, -1, -1) if not s >> b & 1]
    out = []
    for i in range(1 << len(absent)):
        ind = s
        for j, bit in enumerate(absent):
            if i >> j & 1:
                ind += bit
        out.append(ind)
    return out


def enumerate_down_set(s, lattice):
    """States contained in ``s``, clearing its present bits in every combination."""
    n = _n_of(lattice)
    present = [1 << b for b in range(n - 1, -1, -1) if s >> b & 1]
    out = []
    for i in range(1 << len(present)):
        ind = s
        for j, bit in enumerate(present):
            if i >> j & 1:
                ind -= bit
        out.append(ind)
    return out


def mass_with_reads(s, lattice):
    """Posterior mass of the up-set of ``s`` and the number of array reads used."""
    return _backend.K.mass(lattice.probs, lattice.n_active, s)


def mass(s, lattice):
    return mass_with_reads(s, lattice)[0]


def subject_marginal(subject_id, lattice):
    """P(subject negative | data)."""
    return mass(1 << lattice.bit_of(subject_id), lattice)


def update_posterior(lattice, pool, response, model):
    """Condition ``lattice`` in place on one test of ``pool``; returns it."""
    if pool <= 0:
        raise LatticeError("empty pool")
    if pool > lattice.top:
        raise LatticeError(f"pool {pool:#x} addresses inactive bits")
    negative = Outcome.parse(response) is Outcome.NEGATIVE
    table = response_table(model, pool.bit_count(), negative)
    probs, total = _backend.K.weigh(lattice.probs, pool, table)
    if not total >= UNDERFLOW_GUARD:
        raise ImpossibleResponseError(f"impossible response: total likelihood {total:.3g}")
    probs /= total
    lattice.probs = probs
    lattice.tests_applied += 1
    return lattice


def _fold_out(lattice, bit):
    probs = _backend.K.marginalize(lattice.probs, bit)
    probs /= _backend.K.seqsum(probs)
    lattice.probs = probs
    del lattice.bit_to_subject[bit]


def classify_and_shrink(lattice, thresholds):
    """Commit every subject whose marginal crossed a threshold and fold it out.

    Scans from the lowest bit, commits the first qualifying subject, halves
    the array and rescans. Returns the commitments in order.
    """
    events = []
    while lattice.n_active:
        for bit in range(lattice.n_active):
            marginal = mass(1 << bit, lattice)
            if marginal >= 1.0 - thresholds.upper_eps:
                decision, residual = Outcome.NEGATIVE, 1.0 - marginal
            elif marginal <= thresholds.lower_eps:
                decision, residual = Outcome.POSITIVE, marginal
            else:
                continue
            sid = lattice.bit_to_subject[bit]
            event = Commitment(sid, decision, min(max(residual, 0.0), 1.0), lattice.tests_applied)
            lattice.classifications[sid] = event
            events.append(event)
            _fold_out(lattice, bit)
            break
        else:
            break
    return events
