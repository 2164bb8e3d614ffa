"""
Ancestral Sampler
=================
Completes a posterior draw: given a retained proposal sample and its sampled
naive sequence, draws a rate class for every column and then the states of
every internal node, pre-order from the naive leaf.

Also hosts the end-to-end posterior sampler (SIR, backward naive sampling,
ancestral sampling) and the line-oriented draw archive.
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from errors import ImpossibleDataError, InvalidArgumentError, TraceFormatError
from hmm_prior import NaivePrior
from phylo_hmm import backward_sample_naive, emissions_from_per_rate, forward
from phylogeny import CladeTree, Msa, PartialLikelihoods, parse_newick, prune_partials, serialize_newick
from proposal_base import PhyloSample
from sir_sampler import (SirConfig, diagnose, observed_alignment, resample_indices, weight_pool,
                         WeightedPool, SirDiagnostics)
from substitution_model import (BASE_INDEX, EXCHANGEABILITY_NAMES, NUCLEOTIDES, GtrParams,
                                RateMatrix, build_rate_matrix, discrete_gamma_rates)
from worker_pool import run_tasks, values_or_raise

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PosteriorDraw:
    """
    One full posterior draw. internal_states[r] holds the states (0..3) of
    internal_nodes[r] across all columns; rows follow naive-rooted preorder.
    """

    sample: PhyloSample
    naive: str
    site_rates: np.ndarray
    internal_nodes: tuple
    internal_states: np.ndarray
    log_weight: float = 0.0

    def __post_init__(self):
        n = len(self.naive)
        if self.site_rates.shape != (n,):
            raise InvalidArgumentError(f"{self.site_rates.shape[0]} site rates for a naive of length {n}")
        if self.internal_states.shape != (len(self.internal_nodes), n):
            raise InvalidArgumentError(f"internal state matrix {self.internal_states.shape} does not match "
                                       f"{len(self.internal_nodes)} internal nodes x {n} columns")

    @property
    def tree(self) -> CladeTree:
        return self.sample.tree

    def internal_sequences(self) -> Dict[int, str]:
        return {u: "".join(NUCLEOTIDES[s] for s in row)
                for u, row in zip(self.internal_nodes, self.internal_states)}

    def node_sequence(self, node: int, msa: Msa) -> str:
        """DNA at any node: naive, sampled internal, or observed tip."""
        tree = self.tree
        if node == tree.naive:
            return self.naive
        if tree.is_leaf(node):
            return msa.sequence(tree.labels[node])
        row = self.internal_nodes.index(node)
        return "".join(NUCLEOTIDES[s] for s in self.internal_states[row])


# ─────────────────────────────────────────────
#  Per-draw context
# ─────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class DrawContext:
    """Pruning results for one tree sample, one PartialLikelihoods per rate class."""

    q: RateMatrix
    rates: tuple
    partials: tuple
    per_rate: np.ndarray           # (K, n, 4) naive-conditional log-likelihoods


def draw_context(tree: CladeTree, params: GtrParams, rates: Sequence[float], msa: Msa) -> DrawContext:
    q = build_rate_matrix(params)
    partials = tuple(prune_partials(tree, msa, q, rate, root=tree.naive, observe_naive=False) for rate in rates)
    per_rate = np.stack([pl.log_vector(tree.naive) for pl in partials])
    return DrawContext(q=q, rates=tuple(rates), partials=partials, per_rate=per_rate)


def _categorical_rows(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a non-negative (rows, k) weight matrix."""
    totals = weights.sum(axis=1)
    if np.any(~(totals > 0)):
        raise ImpossibleDataError("every state has zero probability for some column")
    cdf = np.cumsum(weights / totals[:, None], axis=1)
    u = rng.random(weights.shape[0])
    return np.minimum((cdf <= u[:, None]).sum(axis=1), weights.shape[1] - 1)


def sample_site_rates(context: DrawContext, naive_codes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rate class per column drawn in proportion to p(D(j) | tree, params, naive(j), r_k)."""
    log_lik = context.per_rate[:, np.arange(len(naive_codes)), naive_codes].T      # (n, K)
    if len(context.rates) == 1:
        if np.any(~np.isfinite(log_lik[:, 0])):
            raise ImpossibleDataError("a column has zero likelihood under its naive state")
        return np.zeros(len(naive_codes), dtype=int)
    peak = log_lik.max(axis=1, keepdims=True)
    if np.any(~np.isfinite(peak)):
        raise ImpossibleDataError("every rate class has zero likelihood for some column")
    return _categorical_rows(np.exp(log_lik - peak), rng)


def sample_internal_states(tree: CladeTree, context: DrawContext, naive_codes: np.ndarray,
                           site_rates: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    (m-1, n) internal states. For each rate class, columns in that class are
    sampled together: a node with parent state a takes state i with
    probability proportional to P(t * rate)[a, i] * F_node[i].
    """
    internal = tree.internal_nodes
    row_of = {u: r for r, u in enumerate(internal)}
    n = len(naive_codes)
    states = np.zeros((len(internal), n), dtype=np.uint8)
    for k, rate in enumerate(context.rates):
        cols = np.flatnonzero(site_rates == k)
        if cols.size == 0 or not internal:
            continue
        pl: PartialLikelihoods = context.partials[k]
        view = pl.view
        p = context.q.transitions(view.length * rate)
        current = {tree.naive: naive_codes[cols]}
        for u in view.preorder[1:]:
            if tree.is_leaf(u):
                continue
            parent_states = current[int(view.parent[u])]
            weights = p[u][parent_states] * pl.partials[u][cols]
            current[u] = _categorical_rows(weights, rng)
            states[row_of[u], cols] = current[u]
    return states


def sample_site_rate(tree: CladeTree, msa: Msa, column: int, naive_state, params: GtrParams,
                     rates: Sequence[float], rng: np.random.Generator) -> int:
    """Rate class index for a single column."""
    state = BASE_INDEX[naive_state] if isinstance(naive_state, str) else int(naive_state)
    context = draw_context(tree, params, rates, msa.columns([column]))
    return int(sample_site_rates(context, np.array([state]), rng)[0])


def sample_ancestral_states(tree: CladeTree, msa: Msa, column: int, naive_state, rate: float,
                            params: GtrParams, rng: np.random.Generator) -> Dict[int, str]:
    """Internal node states for a single column at a fixed rate, keyed by node id."""
    state = BASE_INDEX[naive_state] if isinstance(naive_state, str) else int(naive_state)
    context = draw_context(tree, params, (rate,), msa.columns([column]))
    states = sample_internal_states(tree, context, np.array([state]), np.zeros(1, dtype=int), rng)
    return {u: NUCLEOTIDES[row[0]] for u, row in zip(tree.internal_nodes, states)}


def complete_draw(sample: PhyloSample, data: Msa, prior: Optional[NaivePrior], k_rates: int,
                  rng: np.random.Generator, naive: Optional[str] = None, log_weight: float = 0.0) -> PosteriorDraw:
    """
    Naive sequence (sampled backward unless fixed), then site rates and
    internal states, all from one set of partial likelihoods.
    """
    rm = discrete_gamma_rates(sample.alpha, k_rates)
    context = draw_context(sample.tree, sample.params, rm.rates, data)
    if naive is None:
        em = emissions_from_per_rate(context.per_rate)
        naive = backward_sample_naive(prior, em, forward(prior, em), rng)
    elif len(naive) != data.n:
        raise InvalidArgumentError(f"naive length {len(naive)} != alignment width {data.n}")
    naive_codes = np.array([BASE_INDEX[c] for c in naive], dtype=int)
    site_rates = sample_site_rates(context, naive_codes, rng)
    internal = sample_internal_states(sample.tree, context, naive_codes, site_rates, rng)
    return PosteriorDraw(sample=sample, naive=naive, site_rates=site_rates,
                         internal_nodes=tuple(sample.tree.internal_nodes), internal_states=internal,
                         log_weight=log_weight)


# ─────────────────────────────────────────────
#  End-to-end
# ─────────────────────────────────────────────
@dataclass
class PosteriorRun:
    draws: List[PosteriorDraw]
    pool: WeightedPool
    selected: List[int]
    diagnostics: SirDiagnostics


def run_posterior(msa: Msa, prior: NaivePrior, samples: Sequence[PhyloSample], sir: SirConfig,
                  k_rates: int = 4, naive_label: str = "naive", threads: int = 1) -> PosteriorRun:
    """
    SIR over the proposal pool, then for each retained sample a backward naive
    draw and ancestral sampling. Draw d uses its own stream spawned from the
    master seed, so results do not depend on thread count.
    """
    data = observed_alignment(msa, naive_label)
    if prior.n != data.n:
        raise InvalidArgumentError(f"prior length {prior.n} != alignment width {data.n}")
    if len(samples) > sir.n_pool:
        samples = list(samples)[-sir.n_pool:]
    pool = weight_pool(samples, data, prior, k_rates, threads)
    diag = diagnose(pool, sir)

    streams = np.random.SeedSequence(sir.seed).spawn(sir.n_final + 1)
    selected = [int(i) for i in resample_indices(pool.log_weights, sir.n_final, np.random.default_rng(streams[0]))]

    def task(d: int) -> PosteriorDraw:
        i = selected[d]
        return complete_draw(pool.samples[i], data, prior, k_rates, np.random.default_rng(streams[d + 1]),
                             log_weight=float(pool.log_weights[i]))

    draws = values_or_raise(run_tasks(task, range(len(selected)), threads, label="ancestral"))
    logger.info(f"Sampled {len(draws)} posterior draws")
    return PosteriorRun(draws=draws, pool=pool, selected=selected, diagnostics=diag)


def sample_posterior(msa: Msa, prior: NaivePrior, samples: Sequence[PhyloSample], sir: SirConfig,
                     k_rates: int = 4, naive_label: str = "naive", threads: int = 1) -> List[PosteriorDraw]:
    return run_posterior(msa, prior, samples, sir, k_rates, naive_label, threads).draws


def sample_fixed_naive(draws: Sequence[PosteriorDraw], msa: Msa, naive: str, k_rates: int = 4,
                       seed: int = 0, naive_label: str = "naive", threads: int = 1) -> List[PosteriorDraw]:
    """Ancestral sampling on the same retained trees with the naive held at a point estimate."""
    data = observed_alignment(msa, naive_label)
    streams = np.random.SeedSequence(seed).spawn(len(draws))

    def task(d: int) -> PosteriorDraw:
        return complete_draw(draws[d].sample, data, None, k_rates, np.random.default_rng(streams[d]),
                             naive=naive, log_weight=draws[d].log_weight)

    return values_or_raise(run_tasks(task, range(len(draws)), threads, label="fixed-naive"))


# ─────────────────────────────────────────────
#  Archive
# ─────────────────────────────────────────────
def draw_record(draw: PosteriorDraw) -> dict:
    signatures = draw.tree.clade_signatures()
    return {
        "newick": serialize_newick(draw.tree),
        "params": draw.sample.params.as_dict(),
        "alpha": draw.sample.alpha,
        "proposal_loglik": draw.sample.proposal_loglik,
        "log_weight": draw.log_weight,
        "naive": draw.naive,
        "site_rates": [int(r) for r in draw.site_rates],
        "internal": {signatures[u]: seq for u, seq in draw.internal_sequences().items()},
    }


def write_archive(draws: Sequence[PosteriorDraw], path) -> None:
    with open(path, "w") as fh:
        for draw in draws:
            fh.write(json.dumps(draw_record(draw), sort_keys=True) + "\n")


def read_archive(path, naive_label: str = "naive") -> List[PosteriorDraw]:
    draws = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                tree = parse_newick(rec["newick"], naive_label)
                params = GtrParams.from_arrays([rec["params"][f"e_{k}"] for k in EXCHANGEABILITY_NAMES],
                                               [rec["params"][f"pi_{b}"] for b in NUCLEOTIDES])
                sample = PhyloSample(tree=tree, params=params, alpha=float(rec["alpha"]),
                                     proposal_loglik=float(rec["proposal_loglik"]))
                signatures = tree.clade_signatures()
                internal = tree.internal_nodes
                states = np.array([[BASE_INDEX[c] for c in rec["internal"][signatures[u]]] for u in internal],
                                  dtype=np.uint8).reshape(len(internal), len(rec["naive"]))
                draws.append(PosteriorDraw(sample=sample, naive=rec["naive"],
                                           site_rates=np.array(rec["site_rates"], dtype=int),
                                           internal_nodes=tuple(internal), internal_states=states,
                                           log_weight=float(rec["log_weight"])))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise TraceFormatError(f"{path}, record {line_no}: {exc}") from None
    return draws
