"""
Oracle
======
Brute-force reference computations for tiny instances: explicit enumeration
over internal node states, rate classes and naive sequences. Exponential in
every dimension; meant for checking the fast paths.
"""

import itertools
import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from hmm_prior import NaivePrior, prior_logprob
from phylogeny import CladeTree, Msa, random_topology
from substitution_model import NUCLEOTIDES, GtrParams, RateMatrix, build_rate_matrix

logger = logging.getLogger(__name__)


def _leaf_states(tree: CladeTree, msa: Msa, column: int) -> Dict[int, Tuple[int, ...]]:
    """Allowed states per observed leaf at one column (all four for N and gaps)."""
    rows = {sid: k for k, sid in enumerate(msa.ids)}
    out = {}
    for u in tree.tips:
        code = int(msa.codes[rows[tree.labels[u]], column])
        out[u] = (0, 1, 2, 3) if code == 4 else (code,)
    return out


def column_joint_table(tree: CladeTree, q: RateMatrix, rate: float, msa: Msa, column: int) -> np.ndarray:
    """
    p(D(j), internal states | naive state) at one rate, shape (4, 4 ** n_internal).
    Internal states are enumerated in itertools.product order over tree.internal_nodes.
    """
    view = tree.rooted(tree.naive)
    p = q.transitions(view.length * rate)
    internal = tree.internal_nodes
    leaves = _leaf_states(tree, msa, column)
    leaf_nodes = list(leaves)
    table = np.zeros((4, 4 ** len(internal)))
    for naive_state in range(4):
        for k, int_states in enumerate(itertools.product(range(4), repeat=len(internal))):
            assignment = {tree.naive: naive_state, **dict(zip(internal, int_states))}
            total = 0.0
            for leaf_states in itertools.product(*(leaves[u] for u in leaf_nodes)):
                full = {**assignment, **dict(zip(leaf_nodes, leaf_states))}
                prob = 1.0
                for u in view.preorder[1:]:
                    prob *= p[u][full[int(view.parent[u])], full[u]]
                total += prob
            table[naive_state, k] = total
    return table


def naive_conditional_site_likelihood(tree: CladeTree, msa: Msa, column: int, naive_state: int,
                                      q: RateMatrix, rate: float = 1.0) -> float:
    return float(column_joint_table(tree, q, rate, msa, column)[naive_state].sum())


def augmented_column_likelihood(tree: CladeTree, msa: Msa, column: int, q: RateMatrix, rate: float = 1.0) -> float:
    """Standard column likelihood with the naive leaf marginalised at stationarity."""
    table = column_joint_table(tree, q, rate, msa, column)
    return float(q.pi @ table.sum(axis=1))


def emission_table(tree: CladeTree, params: GtrParams, rates: Sequence[float], msa: Msa) -> np.ndarray:
    """(n, 4) log emissions by enumeration."""
    q = build_rate_matrix(params)
    em = np.zeros((msa.n, 4))
    for j in range(msa.n):
        per_rate = np.array([column_joint_table(tree, q, r, msa, j).sum(axis=1) for r in rates])
        with np.errstate(divide="ignore"):
            em[j] = np.log(per_rate.mean(axis=0))
    return em


def forward_log_likelihood(prior: NaivePrior, log_emissions: np.ndarray) -> float:
    """log sum over all 4^n naive sequences of p(Y) * prod_j emission."""
    n = log_emissions.shape[0]
    terms = []
    for seq in itertools.product(range(4), repeat=n):
        terms.append(prior_logprob(prior, "".join(NUCLEOTIDES[s] for s in seq))
                     + sum(log_emissions[j, s] for j, s in enumerate(seq)))
    return float(logsumexp(terms))


def naive_posterior(prior: NaivePrior, log_emissions: np.ndarray) -> Dict[str, float]:
    n = log_emissions.shape[0]
    seqs, terms = [], []
    for seq in itertools.product(range(4), repeat=n):
        s = "".join(NUCLEOTIDES[x] for x in seq)
        seqs.append(s)
        terms.append(prior_logprob(prior, s) + sum(log_emissions[j, x] for j, x in enumerate(seq)))
    terms = np.array(terms)
    probs = np.exp(terms - logsumexp(terms))
    return dict(zip(seqs, probs))


def viterbi(prior: NaivePrior, log_emissions: np.ndarray) -> Tuple[str, float]:
    """Brute-force MAP; the first maximiser in lexicographic order wins."""
    best, best_seq = -math.inf, None
    for seq in itertools.product(range(4), repeat=log_emissions.shape[0]):
        s = "".join(NUCLEOTIDES[x] for x in seq)
        score = prior_logprob(prior, s) + sum(log_emissions[j, x] for j, x in enumerate(seq))
        if score > best + 1e-12 * max(1.0, abs(best)) or best_seq is None:
            best, best_seq = score, s
    return best_seq, best


def joint_site_posterior(tree: CladeTree, params: GtrParams, rates: Sequence[float], msa: Msa,
                         prior: NaivePrior, site: int = 0) -> Dict[Tuple[str, int, Tuple[int, ...]], float]:
    """
    Posterior over (naive sequence, rate class at site, internal states at site)
    with everything at the other columns summed out.
    """
    q = build_rate_matrix(params)
    k = len(rates)
    tables = [np.array([column_joint_table(tree, q, r, msa, j) for r in rates]) / k for j in range(msa.n)]
    marginal = [t.sum(axis=(0, 2)) for t in tables]                # (4,) per column
    internal_configs = list(itertools.product(range(4), repeat=len(tree.internal_nodes)))
    out = {}
    for seq in itertools.product(range(4), repeat=msa.n):
        s = "".join(NUCLEOTIDES[x] for x in seq)
        base = math.exp(prior_logprob(prior, s))
        if base == 0.0:
            continue
        for j, x in enumerate(seq):
            if j != site:
                base *= marginal[j][x]
        for r in range(k):
            for c, config in enumerate(internal_configs):
                out[(s, r, config)] = base * tables[site][r, seq[site], c]
    total = sum(out.values())
    return {key: v / total for key, v in out.items() if v > 0}


def random_instance(rng: np.random.Generator, m: int, n: int, naive_label: str = "naive"):
    """Random tree, GTR parameters, alignment (with a few N) and prior."""
    tree = random_topology([f"s{i}" for i in range(1, m + 1)], naive_label, rng)
    tree = tree.with_branch_lengths(rng.uniform(0.01, 0.5, size=len(tree.edges)))
    params = GtrParams.from_arrays(rng.uniform(0.5, 2.0, 6), rng.dirichlet(np.full(4, 5.0)))
    alphabet = "ACGTN"
    seqs = ["".join(alphabet[c] for c in rng.choice(5, size=n, p=[0.23, 0.23, 0.23, 0.23, 0.08]))
            for _ in range(m)]
    msa = Msa(tuple(f"s{i}" for i in range(1, m + 1)), tuple(seqs))
    initial = rng.dirichlet(np.ones(4))
    transitions = rng.dirichlet(np.ones(4), size=(max(n - 1, 0), 4))
    prior = NaivePrior(initial=initial, transitions=transitions.reshape(max(n - 1, 0), 4, 4))
    return tree, params, msa, prior
