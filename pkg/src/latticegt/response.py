"""Test-response model with pool dilution."""

from dataclasses import dataclass
from functools import lru_cache

from . import _backend
from .errors import LatticeError


@dataclass(frozen=True)
class ResponseModel:
    """P(response | state, pool) for a binary pooled assay.

    A pool of ``m`` subjects of which ``k`` are positive reads negative with
    probability ``specificity`` when ``k == 0`` and
    ``1 - sensitivity * (k / m) ** dilution_exponent`` otherwise.
    The default is the noiseless assay.
    """

    sensitivity: float = 1.0
    specificity: float = 1.0
    dilution_exponent: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.sensitivity <= 1.0:
            raise LatticeError(f"sensitivity must lie in (0, 1], got {self.sensitivity}")
        if not 0.0 < self.specificity <= 1.0:
            raise LatticeError(f"specificity must lie in (0, 1], got {self.specificity}")
        if not self.dilution_exponent >= 0.0:
            raise LatticeError(f"dilution_exponent must be >= 0, got {self.dilution_exponent}")

    @property
    def noiseless(self):
        return self.sensitivity == 1.0 and self.specificity == 1.0 and self.dilution_exponent == 0.0

    def negative_table(self, pool_size):
        """P(negative | k positives) for k = 0..pool_size."""
        return _negative_table(self, pool_size)

    def positive_table(self, pool_size):
        return _positive_table(self, pool_size)


@lru_cache(maxsize=1024)
def _negative_table(model, m):
    table = [model.specificity]
    for k in range(1, m + 1):
        table.append(1.0 - model.sensitivity * (k / m) ** model.dilution_exponent)
    return tuple(table)


@lru_cache(maxsize=1024)
def _positive_table(model, m):
    return tuple(1.0 - p for p in _negative_table(model, m))


def response_table(model, pool_size, negative):
    return model.negative_table(pool_size) if negative else model.positive_table(pool_size)


def likelihood_negative(state, pool, model):
    """Probability that testing ``pool`` reads negative if ``state`` is true."""
    if pool <= 0:
        raise LatticeError("empty pool")
    m = pool.bit_count()
    k = (pool & ~state).bit_count()
    return model.negative_table(m)[k]


def predictive_negative(lattice, pool, model):
    """Posterior predictive probability that ``pool`` reads negative."""
    if pool <= 0:
        raise LatticeError("empty pool")
    _, total = _backend.K.weigh(lattice.probs, pool, model.negative_table(pool.bit_count()))
    return min(max(total, 0.0), 1.0)


def predictive_positive(lattice, pool, model):
    return 1.0 - predictive_negative(lattice, pool, model)
