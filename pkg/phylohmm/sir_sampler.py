"""
SIR Sampler
===========
Turns proposal draws into posterior draws. Each proposal sample is weighted
by the phylo-HMM likelihood of the observed alignment D over its proposal
likelihood on D*, then N_final samples are drawn without replacement with
probability proportional to the weights.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from errors import InsufficientPoolError, InvalidParameterError
from hmm_prior import NaivePrior
from phylo_hmm import compute_emissions, forward
from phylogeny import Msa
from proposal_base import PhyloSample
from proposals.trace import write_trace
from substitution_model import discrete_gamma_rates
from worker_pool import run_tasks

logger = logging.getLogger(__name__)

CONFIG = {
    "n_pool":      4500,
    "pool_ratio":  20,          # default N_pool / N_final
    "seed":        0,
}


@dataclass(frozen=True)
class SirConfig:
    n_pool: int = CONFIG["n_pool"]
    n_final: Optional[int] = None
    seed: int = CONFIG["seed"]

    def __post_init__(self):
        if self.n_pool < 1:
            raise InvalidParameterError(f"N_pool must be positive, got {self.n_pool}")
        if self.n_final is None:
            object.__setattr__(self, "n_final", max(1, self.n_pool // CONFIG["pool_ratio"]))
        if not 1 <= self.n_final <= self.n_pool:
            raise InvalidParameterError(f"need 1 <= N_final <= N_pool, got {self.n_final} and {self.n_pool}")


@dataclass(frozen=True, eq=False)
class WeightedPool:
    samples: tuple
    log_weights: np.ndarray

    def __post_init__(self):
        samples = tuple(self.samples)
        log_weights = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if len(samples) != len(log_weights):
            raise InvalidParameterError(f"{len(samples)} samples but {len(log_weights)} weights")
        if not np.any(np.isfinite(log_weights)):
            raise InsufficientPoolError("no proposal sample has a finite weight")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "log_weights", log_weights)

    @property
    def n_finite(self) -> int:
        return int(np.isfinite(self.log_weights).sum())

    def normalised_weights(self) -> np.ndarray:
        lw = np.where(np.isfinite(self.log_weights), self.log_weights, -np.inf)
        return np.exp(lw - logsumexp(lw))


@dataclass(frozen=True)
class SirDiagnostics:
    n_pool: int
    n_final: int
    ess: float
    n_finite: int
    max_weight: float


def observed_alignment(msa: Msa, naive_label: str) -> Msa:
    """D: the alignment without the naive point-estimate row."""
    return msa.without(naive_label) if naive_label in msa.ids else msa


def compute_log_weight(sample: PhyloSample, msa: Msa, prior: NaivePrior, k_rates: int,
                       naive_label: Optional[str] = None) -> float:
    """log w = phylo-HMM forward log-likelihood of D minus log q(D* | sample)."""
    data = observed_alignment(msa, naive_label or sample.tree.naive_label)
    rm = discrete_gamma_rates(sample.alpha, k_rates)
    em = compute_emissions(sample.tree, sample.params, rm, data)
    log_lik = forward(prior, em).log_likelihood
    return log_lik - sample.proposal_loglik


def weight_pool(samples: Sequence[PhyloSample], msa: Msa, prior: NaivePrior, k_rates: int,
                threads: int = 1) -> WeightedPool:
    results = run_tasks(lambda s: compute_log_weight(s, msa, prior, k_rates), samples, threads, label="weight")
    log_weights = np.array([r.value if r.ok else -math.inf for r in results], dtype=float)
    return WeightedPool(samples=tuple(samples), log_weights=log_weights)


def resample_indices(log_weights: np.ndarray, n_final: int, rng: np.random.Generator) -> np.ndarray:
    """
    Weighted sampling without replacement by exponential (Gumbel) keys.

    Item i gets key log_weight_i + Gumbel noise; the n_final largest keys win
    and are returned in descending key order.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(log_weights)
    if finite.sum() < n_final:
        raise InsufficientPoolError(f"only {int(finite.sum())} finite-weight samples for {n_final} draws")
    keys = np.where(finite, log_weights + rng.gumbel(size=log_weights.shape), -np.inf)
    order = np.argsort(-keys, kind="stable")
    return order[:n_final]


def resample_without_replacement(pool: WeightedPool, config: SirConfig,
                                 rng: np.random.Generator) -> List[PhyloSample]:
    return [pool.samples[i] for i in resample_indices(pool.log_weights, config.n_final, rng)]


def effective_sample_size(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    lw = lw[np.isfinite(lw)]
    if lw.size == 0:
        return 0.0
    w = np.exp(lw - logsumexp(lw))
    return float(1.0 / np.sum(w ** 2))


def diagnose(pool: WeightedPool, config: SirConfig) -> SirDiagnostics:
    ess = effective_sample_size(pool.log_weights)
    diag = SirDiagnostics(n_pool=len(pool.samples), n_final=config.n_final, ess=ess,
                          n_finite=pool.n_finite, max_weight=float(pool.normalised_weights().max()))
    logger.info(f"SIR: ESS {ess:.1f} from {diag.n_finite}/{diag.n_pool} finite weights, "
                f"max normalised weight {diag.max_weight:.4f}")
    if ess < config.n_final:
        logger.warning(f"SIR effective sample size {ess:.1f} is below N_final={config.n_final}")
    return diag


def write_posterior_pool(pool: WeightedPool, indices: Sequence[int], trees_file, params_file) -> None:
    """Selected trees plus their parameter rows and log-weights, in selection order."""
    indices = list(indices)
    write_trace([pool.samples[i] for i in indices], trees_file, params_file,
                log_weights=[float(pool.log_weights[i]) for i in indices])
