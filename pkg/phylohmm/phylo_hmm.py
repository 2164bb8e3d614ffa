"""
Phylo-HMM
=========
Hidden Markov model over alignment columns whose hidden state is the naive
base. Emissions are naive-conditional tree likelihoods averaged over the K
gamma rate classes; the chain is the naive prior.

Everything runs in log space.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from errors import DataMismatchError, ImpossibleDataError, InvalidArgumentError
from hmm_prior import NaivePrior
from phylogeny import LEAF_VECTORS, CladeTree, Msa, naive_conditional_log_likelihoods
from substitution_model import NUCLEOTIDES, GtrParams, RateModel, build_rate_matrix

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class EmissionTable:
    """
    log_emissions[j, i] = log (1/K) sum_k p(D(j) | tree, params, naive = i, r_k).

    per_rate keeps the un-mixed (K, n, 4) table so ancestral sampling can
    condition on a rate class without pruning again.
    """

    log_emissions: np.ndarray
    per_rate: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.log_emissions.shape[0]


@dataclass(frozen=True, eq=False)
class ForwardMessages:
    log_alpha: np.ndarray
    log_likelihood: float


def emissions_from_per_rate(per_rate: np.ndarray) -> EmissionTable:
    """Equal-weight mixture of a (K, n, 4) table of per-rate naive-conditional log-likelihoods."""
    per_rate = np.asarray(per_rate, dtype=float)
    log_em = logsumexp(per_rate, axis=0) - math.log(per_rate.shape[0])
    return EmissionTable(log_emissions=log_em, per_rate=per_rate)


def compute_emissions(tree: CladeTree, params: GtrParams, rm: RateModel, msa: Msa) -> EmissionTable:
    q = build_rate_matrix(params)
    return emissions_from_per_rate(
        np.stack([naive_conditional_log_likelihoods(tree, msa, q, rate) for rate in rm.rates]))


def _check_lengths(prior: NaivePrior, em: EmissionTable) -> None:
    if prior.n != em.n:
        raise DataMismatchError(f"prior length {prior.n} != alignment width {em.n}")


def forward(prior: NaivePrior, em: EmissionTable) -> ForwardMessages:
    _check_lengths(prior, em)
    log_t = prior.log_transitions()
    log_alpha = np.empty((em.n, 4))
    log_alpha[0] = prior.log_initial() + em.log_emissions[0]
    for j in range(1, em.n):
        log_alpha[j] = logsumexp(log_alpha[j - 1][:, None] + log_t[j - 1], axis=0) + em.log_emissions[j]
    return ForwardMessages(log_alpha=log_alpha, log_likelihood=float(logsumexp(log_alpha[-1])))


def backward_messages(prior: NaivePrior, em: EmissionTable) -> np.ndarray:
    """log_beta[j, a] = log p(D(j+1..n) | Y(j) = a)."""
    _check_lengths(prior, em)
    log_t = prior.log_transitions()
    log_beta = np.zeros((em.n, 4))
    for j in range(em.n - 2, -1, -1):
        log_beta[j] = logsumexp(log_t[j] + (em.log_emissions[j + 1] + log_beta[j + 1])[None, :], axis=1)
    return log_beta


def _draw_from_log(weights: np.ndarray, rng: np.random.Generator) -> int:
    peak = weights.max()
    probs = np.exp(weights - peak)
    return int(rng.choice(4, p=probs / probs.sum()))


def backward_sample_naive(prior: NaivePrior, em: EmissionTable, fwd: ForwardMessages,
                          rng: np.random.Generator) -> str:
    """Exact draw from p(naive | tree, params, D) by sampling back from the last column."""
    if not math.isfinite(fwd.log_likelihood):
        raise ImpossibleDataError("every naive sequence has zero posterior probability")
    log_t = prior.log_transitions()
    states = np.empty(em.n, dtype=int)
    states[-1] = _draw_from_log(fwd.log_alpha[-1], rng)
    for j in range(em.n - 2, -1, -1):
        states[j] = _draw_from_log(fwd.log_alpha[j] + log_t[j][:, states[j + 1]], rng)
    return "".join(NUCLEOTIDES[s] for s in states)


def _first_max(values: np.ndarray) -> int:
    """Smallest index attaining the maximum (up to rounding)."""
    peak = values.max()
    slack = TIE_TOLERANCE * max(1.0, abs(peak))
    return int(np.flatnonzero(values >= peak - slack)[0])


def viterbi_naive(prior: NaivePrior, em: EmissionTable) -> Tuple[str, float]:
    """
    MAP naive sequence and its log prior-times-emission score.

    Max-messages are accumulated from the last column backwards, then the path
    is decoded left to right taking the smallest best base at each step, which
    yields the lexicographically smallest of all tied optima.
    """
    _check_lengths(prior, em)
    log_t = prior.log_transitions()
    suffix = np.zeros((em.n, 4))
    for j in range(em.n - 2, -1, -1):
        suffix[j] = np.max(log_t[j] + (em.log_emissions[j + 1] + suffix[j + 1])[None, :], axis=1)

    scores = prior.log_initial() + em.log_emissions[0] + suffix[0]
    best = float(scores.max())
    if not math.isfinite(best):
        raise ImpossibleDataError("every naive sequence has zero posterior probability")
    states = [_first_max(scores)]
    for j in range(em.n - 1):
        states.append(_first_max(log_t[j][states[-1]] + em.log_emissions[j + 1] + suffix[j + 1]))
    return "".join(NUCLEOTIDES[s] for s in states), best


def posterior_marginals(prior: NaivePrior, em: EmissionTable) -> np.ndarray:
    """(n, 4) posterior probability of each naive base per column."""
    fwd = forward(prior, em)
    if not math.isfinite(fwd.log_likelihood):
        raise ImpossibleDataError("every naive sequence has zero posterior probability")
    log_post = fwd.log_alpha + backward_messages(prior, em) - fwd.log_likelihood
    post = np.exp(log_post)
    return post / post.sum(axis=1, keepdims=True)


# ─────────────────────────────────────────────
#  Star-tree approximation
# ─────────────────────────────────────────────
def estimate_star_branch_length(msa: Msa, floor: float = 1e-3) -> float:
    """Mean Jukes-Cantor distance of each sequence to the column-majority consensus."""
    codes = msa.codes
    counts = np.stack([(codes == b).sum(axis=0) for b in range(4)])
    consensus = counts.argmax(axis=0)
    observed = codes < 4
    n_obs = observed.sum(axis=1)
    mismatch = ((codes != consensus[None, :]) & observed).sum(axis=1) / np.maximum(n_obs, 1)
    p = np.clip(mismatch[n_obs > 0].mean() if np.any(n_obs > 0) else 0.0, 0.0, 0.74)
    return float(max(floor, -0.75 * math.log(1.0 - 4.0 * p / 3.0)))


def star_tree_emissions(msa: Msa, branch_length: float, params: Optional[GtrParams] = None,
                        rm: Optional[RateModel] = None) -> EmissionTable:
    """
    Emissions when every sequence hangs directly off the naive sequence on a
    branch of the same length.
    """
    if not math.isfinite(branch_length) or branch_length < 0:
        raise InvalidArgumentError(f"branch length must be non-negative, got {branch_length!r}")
    q = build_rate_matrix(params or GtrParams.jukes_cantor())
    rates = rm.rates if rm is not None else (1.0,)
    tips = LEAF_VECTORS[msa.codes]                       # (m, n, 4)
    per_rate = []
    for rate in rates:
        p = q.transition(branch_length * rate)
        with np.errstate(divide="ignore"):
            per_rate.append(np.log(tips @ p.T).sum(axis=0))
    return emissions_from_per_rate(np.stack(per_rate))


def star_naive_estimate(msa: Msa, prior: NaivePrior, branch_length: Optional[float] = None,
                        params: Optional[GtrParams] = None) -> str:
    """Viterbi naive sequence under the prior with star-tree emissions."""
    if branch_length is None:
        branch_length = estimate_star_branch_length(msa)
    seq, score = viterbi_naive(prior, star_tree_emissions(msa, branch_length, params))
    logger.info(f"Star-tree naive estimate (branch length {branch_length:.4g}, log score {score:.6g})")
    return seq


def star_marginal_estimate(msa: Msa, prior: NaivePrior, branch_length: Optional[float] = None,
                           params: Optional[GtrParams] = None) -> str:
    """Per-column posterior argmax under the prior with star-tree emissions."""
    if branch_length is None:
        branch_length = estimate_star_branch_length(msa)
    post = posterior_marginals(prior, star_tree_emissions(msa, branch_length, params))
    return "".join(NUCLEOTIDES[_first_max(row)] for row in post)
