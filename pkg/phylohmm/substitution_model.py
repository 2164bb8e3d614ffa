"""
Substitution Model
==================
GTR rate matrices, transition probabilities P(t) and discrete-gamma rate
categories.

Conventions used everywhere in the package:
  - nucleotide order A, C, G, T (index 0..3)
  - exchangeability order AC, AG, AT, CG, CT, GT
  - Q is rescaled to one expected substitution per unit branch length
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from errors import InvalidArgumentError, InvalidParameterError

logger = logging.getLogger(__name__)

NUCLEOTIDES = "ACGT"
BASE_INDEX = {b: i for i, b in enumerate(NUCLEOTIDES)}
EXCHANGEABILITY_NAMES = ("AC", "AG", "AT", "CG", "CT", "GT")
EXCHANGEABILITY_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
RATE_FLOOR = np.finfo(float).tiny


# ─────────────────────────────────────────────
#  Parameter types
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class GtrParams:
    """GTR exchangeabilities e (AC, AG, AT, CG, CT, GT) and base frequencies pi (A, C, G, T)."""

    exchangeabilities: tuple
    base_freqs: tuple

    def __post_init__(self):
        e = tuple(float(x) for x in self.exchangeabilities)
        pi = tuple(float(x) for x in self.base_freqs)
        if len(e) != 6:
            raise InvalidParameterError(f"expected 6 exchangeabilities, got {len(e)}")
        if len(pi) != 4:
            raise InvalidParameterError(f"expected 4 base frequencies, got {len(pi)}")
        if not all(math.isfinite(x) and x > 0 for x in e):
            raise InvalidParameterError(f"exchangeabilities must be positive and finite: {e}")
        if not all(math.isfinite(x) and x > 0 for x in pi):
            raise InvalidParameterError(f"base frequencies must be strictly positive: {pi}")
        if abs(sum(pi) - 1.0) > 1e-12:
            raise InvalidParameterError(f"base frequencies sum to {sum(pi)!r}, not 1")
        object.__setattr__(self, "exchangeabilities", e)
        object.__setattr__(self, "base_freqs", pi)

    @classmethod
    def from_arrays(cls, exchangeabilities: Sequence[float], base_freqs: Sequence[float],
                    normalize: bool = True) -> "GtrParams":
        """Build params, renormalising base frequencies that sum to 1 only approximately."""
        pi = np.asarray(base_freqs, dtype=float)
        if normalize and np.all(pi > 0):
            pi = pi / pi.sum()
        return cls(tuple(np.asarray(exchangeabilities, dtype=float)), tuple(pi))

    @classmethod
    def jukes_cantor(cls) -> "GtrParams":
        return cls((1.0,) * 6, (0.25,) * 4)

    @property
    def pi(self) -> np.ndarray:
        return np.array(self.base_freqs)

    @property
    def e(self) -> np.ndarray:
        return np.array(self.exchangeabilities)

    def as_dict(self) -> dict:
        out = {f"pi_{b}": p for b, p in zip(NUCLEOTIDES, self.base_freqs)}
        out.update({f"e_{n}": x for n, x in zip(EXCHANGEABILITY_NAMES, self.exchangeabilities)})
        return out


@dataclass(frozen=True)
class RateModel:
    """K equal-probability gamma rate classes induced by shape alpha."""

    alpha: float
    k: int
    rates: tuple

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != self.k:
            raise InvalidParameterError(f"RateModel has {len(rates)} rates for K={self.k}")
        if not all(r > 0 and math.isfinite(r) for r in rates):
            raise InvalidParameterError(f"rates must be positive and finite: {rates}")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise InvalidParameterError(f"rates must be strictly increasing: {rates}")
        object.__setattr__(self, "rates", rates)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.rates)


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Unit-rate GTR generator with its pi-symmetrised eigendecomposition."""

    q: np.ndarray
    pi: np.ndarray
    _eigenvalues: np.ndarray = field(repr=False, compare=False)
    _left: np.ndarray = field(repr=False, compare=False)
    _right: np.ndarray = field(repr=False, compare=False)

    def transition(self, t: float) -> np.ndarray:
        return transition_matrix(self, t)

    def transitions(self, ts) -> np.ndarray:
        return transition_matrices(self, ts)


# ─────────────────────────────────────────────
#  Operations
# ─────────────────────────────────────────────
def build_rate_matrix(params: GtrParams) -> RateMatrix:
    """Q_ij = e_ij * pi_j off the diagonal, rows summing to zero, rescaled to -sum(pi_i Q_ii) = 1."""
    if not isinstance(params, GtrParams):
        raise InvalidParameterError(f"expected GtrParams, got {type(params).__name__}")
    pi = params.pi
    q = np.zeros((4, 4))
    for (i, j), e_ij in zip(EXCHANGEABILITY_PAIRS, params.exchangeabilities):
        q[i, j] = e_ij * pi[j]
        q[j, i] = e_ij * pi[i]
    np.fill_diagonal(q, -q.sum(axis=1))
    q /= -np.dot(pi, np.diag(q))

    # S = D^1/2 Q D^-1/2 is symmetric for a reversible Q
    sqrt_pi = np.sqrt(pi)
    s = q * sqrt_pi[:, None] / sqrt_pi[None, :]
    s = 0.5 * (s + s.T)
    eigenvalues, u = np.linalg.eigh(s)
    left = u / sqrt_pi[:, None]
    right = u.T * sqrt_pi[None, :]

    for a in (q, pi, eigenvalues, left, right):
        a.setflags(write=False)
    return RateMatrix(q=q, pi=pi, _eigenvalues=eigenvalues, _left=left, _right=right)


def transition_matrix(q: RateMatrix, t: float) -> np.ndarray:
    """P(t) = exp(Qt), rows stochastic. P(0) is exactly the identity."""
    t = float(t)
    if not math.isfinite(t) or t < 0:
        raise InvalidArgumentError(f"branch length must be finite and non-negative, got {t!r}")
    if t == 0.0:
        return np.eye(4)
    p = (q._left * np.exp(q._eigenvalues * t)) @ q._right
    return _clean_stochastic(p)


def transition_matrices(q: RateMatrix, ts) -> np.ndarray:
    """Vectorised transition_matrix over an array of branch lengths; returns shape (len(ts), 4, 4)."""
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if not np.all(np.isfinite(ts)) or np.any(ts < 0):
        raise InvalidArgumentError("branch lengths must be finite and non-negative")
    p = np.einsum("ik,tk,kj->tij", q._left, np.exp(np.outer(ts, q._eigenvalues)), q._right)
    p = _clean_stochastic(p)
    p[ts == 0.0] = np.eye(4)
    return p


def _clean_stochastic(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum(axis=-1, keepdims=True)


def discrete_gamma_rates(alpha: float, k: int) -> RateModel:
    """
    Mean rate of each of K equal-probability classes of Gamma(alpha, alpha).

    Class boundaries come from inverting the regularised incomplete gamma
    function; the conditional mean of Gamma(a, a) on [x0, x1] is
    K * (P(a + 1, a*x1) - P(a + 1, a*x0)). Rates are renormalised to mean 1.
    For very small alpha the low classes underflow; they are floored at a
    strictly increasing multiple of the smallest normal float.
    """
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha <= 0:
        raise InvalidParameterError(f"gamma shape must be positive, got {alpha!r}")
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"rate category count must be a positive integer, got {k!r}")
    k = int(k)
    if k == 1:
        return RateModel(alpha=alpha, k=1, rates=(1.0,))

    quantiles = np.arange(1, k) / k
    cuts = np.nan_to_num(special.gammaincinv(alpha, quantiles), nan=0.0)    # on the alpha*x scale
    edges = np.maximum.accumulate(np.concatenate(([0.0], cuts, [np.inf])))
    upper = special.gammainc(alpha + 1.0, edges)
    rates = np.maximum(k * np.diff(upper), 0.0)
    rates = rates / rates.mean()
    rates = np.maximum(rates, RATE_FLOOR * np.arange(1, k + 1))
    return RateModel(alpha=alpha, k=k, rates=tuple(rates))
