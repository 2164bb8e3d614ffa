import math

import numpy as np
import pandas as pd
import pytest

import oracle
from errors import InsufficientPoolError, InvalidParameterError
from hmm_prior import NaivePrior, uniform_iid_prior
from phylogeny import CladeTree, Msa, augmented_log_likelihood
from proposal_base import PhyloSample
from sir_sampler import (SirConfig, WeightedPool, compute_log_weight, diagnose, effective_sample_size,
                         resample_indices, resample_without_replacement, weight_pool, write_posterior_pool)
from substitution_model import GtrParams, build_rate_matrix, discrete_gamma_rates


def sample_for(tree, params, alpha, msa, k_rates):
    """PhyloSample whose proposal likelihood has the naive leaf marginalised (no naive row in msa)."""
    rm = discrete_gamma_rates(alpha, k_rates)
    loglik = augmented_log_likelihood(tree, build_rate_matrix(params), rm.rates, msa)
    return PhyloSample(tree=tree, params=params, alpha=alpha, proposal_loglik=loglik)


def single_edge_sample(t, loglik=0.0):
    tree = CladeTree(("naive", "A"), ((0, 1, t),))
    return PhyloSample(tree=tree, params=GtrParams.jukes_cantor(), alpha=1.0, proposal_loglik=loglik)


# ─────────────────────────────────────────────
#  Weights
# ─────────────────────────────────────────────
def test_weight_zero_when_prior_matches_proposal():
    rng = np.random.default_rng(1)
    for _ in range(10):
        tree, params, msa, _ = oracle.random_instance(rng, 4, 6)
        alpha = float(rng.uniform(0.3, 3.0))
        sample = sample_for(tree, params, alpha, msa, 4)
        prior = uniform_iid_prior(params.pi, msa.n)
        log_w = compute_log_weight(sample, msa.with_sequence("naive", "N" * msa.n), prior, 4)
        assert abs(log_w) < 1e-9


def test_weight_matches_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(1, 5))
        tree, params, msa, prior = oracle.random_instance(rng, 3, n)
        alpha = float(rng.uniform(0.3, 3.0))
        augmented = msa.with_sequence("naive", "".join(rng.choice(list("ACGT"), size=n)))
        sample = PhyloSample(tree=tree, params=params, alpha=alpha, proposal_loglik=-3.5)
        rates = discrete_gamma_rates(alpha, 2).rates
        brute = oracle.forward_log_likelihood(prior, oracle.emission_table(tree, params, rates, msa)) + 3.5
        log_w = compute_log_weight(sample, augmented, prior, 2)
        assert log_w == pytest.approx(brute, rel=1e-10)


def test_weight_impossible_prior():
    prior = NaivePrior(initial=np.array([1.0, 0, 0, 0]), transitions=np.array([[[0, 1.0, 0, 0]] * 4]))
    sample = single_edge_sample(0.0, loglik=-1.0)
    assert compute_log_weight(sample, Msa(("A",), ("GG",)), prior, 1) == -math.inf


def test_weight_pool_threads_agree():
    rng = np.random.default_rng(3)
    tree, params, msa, prior = oracle.random_instance(rng, 4, 5)
    samples = [sample_for(tree.with_branch_lengths(tree.branch_lengths * s), params, 1.0, msa, 2)
               for s in (0.5, 1.0, 2.0, 3.0)]
    serial = weight_pool(samples, msa, prior, 2, threads=1)
    threaded = weight_pool(samples, msa, prior, 2, threads=3)
    np.testing.assert_array_equal(serial.log_weights, threaded.log_weights)


def test_pool_requires_a_finite_weight():
    with pytest.raises(InsufficientPoolError):
        WeightedPool(samples=(single_edge_sample(0.1),), log_weights=[-math.inf])
    with pytest.raises(InvalidParameterError):
        WeightedPool(samples=(single_edge_sample(0.1),), log_weights=[0.0, 1.0])


def test_sir_config_defaults():
    assert SirConfig(n_pool=4500).n_final == 225
    with pytest.raises(InvalidParameterError):
        SirConfig(n_pool=10, n_final=11)


# ─────────────────────────────────────────────
#  Resampling
# ─────────────────────────────────────────────
def test_equal_weights_uniform_inclusion():
    rng = np.random.default_rng(4)
    n_pool, n_final, trials = 10, 3, 100000
    counts = np.zeros(n_pool)
    for _ in range(trials):
        picked = resample_indices(np.zeros(n_pool), n_final, rng)
        assert len(set(picked.tolist())) == n_final
        counts[picked] += 1
    p = n_final / n_pool
    sigma = math.sqrt(p * (1 - p) / trials)
    assert np.all(np.abs(counts / trials - p) < 4 * sigma)


def test_dominant_item_always_included():
    rng = np.random.default_rng(5)
    log_w = np.full(20, -500.0)
    log_w[7] = 500.0
    for _ in range(200):
        assert 7 in resample_indices(log_w, 4, rng)


def test_first_draw_and_inclusion_probabilities():
    weights = np.array([0.5, 0.2, 0.1, 0.1, 0.1])
    log_w = np.log(weights)
    # exact inclusion for two successive weighted draws without replacement
    inclusion = np.array([w + sum(v * w / (1 - v) for k, v in enumerate(weights) if k != i)
                          for i, w in enumerate(weights)])
    rng = np.random.default_rng(6)
    trials = 200000
    first = np.zeros(5)
    included = np.zeros(5)
    for _ in range(trials):
        picked = resample_indices(log_w, 2, rng)
        first[picked[0]] += 1
        included[picked] += 1
    for observed, exact in ((first / trials, weights), (included / trials, inclusion)):
        sigma = np.sqrt(exact * (1 - exact) / trials)
        assert np.all(np.abs(observed - exact) < 4 * sigma)


def test_shift_invariance():
    log_w = np.log(np.array([0.3, 0.05, 0.2, 0.25, 0.2]))
    a = resample_indices(log_w, 3, np.random.default_rng(7))
    b = resample_indices(log_w + 1234.5, 3, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_insufficient_finite_weights():
    with pytest.raises(InsufficientPoolError):
        resample_indices(np.array([0.0, -math.inf, -math.inf]), 2, np.random.default_rng(8))


def test_resample_without_replacement_skips_impossible_samples():
    samples = tuple(single_edge_sample(t) for t in (0.1, 0.2, 0.3, 0.4))
    pool = WeightedPool(samples=samples, log_weights=[0.0, -math.inf, 0.0, 0.0])
    rng = np.random.default_rng(9)
    for _ in range(50):
        chosen = resample_without_replacement(pool, SirConfig(n_pool=4, n_final=3), rng)
        assert len(chosen) == 3
        assert set(chosen) == {samples[0], samples[2], samples[3]}


def test_effective_sample_size():
    assert effective_sample_size(np.zeros(50)) == pytest.approx(50.0)
    assert effective_sample_size([0.0, -1000.0, -1000.0]) == pytest.approx(1.0)
    assert effective_sample_size([-math.inf, 0.0, 0.0]) == pytest.approx(2.0)


def test_diagnose_and_pool_file(tmp_path):
    samples = tuple(single_edge_sample(t) for t in (0.1, 0.2, 0.3, 0.4))
    pool = WeightedPool(samples=samples, log_weights=[0.0, 0.0, -math.inf, math.log(2.0)])
    diag = diagnose(pool, SirConfig(n_pool=4, n_final=2))
    assert diag.n_finite == 3
    assert diag.max_weight == pytest.approx(0.5)
    assert diag.ess == pytest.approx(1.0 / (0.25 ** 2 * 2 + 0.5 ** 2))

    write_posterior_pool(pool, [3, 0], tmp_path / "pool.nwk", tmp_path / "pool.tsv")
    table = pd.read_csv(tmp_path / "pool.tsv", sep="\t")
    assert table["log_weight"].tolist() == pytest.approx([math.log(2.0), 0.0])
    assert len((tmp_path / "pool.nwk").read_text().split()) == 2


# ─────────────────────────────────────────────
#  End to end on a closed-form posterior
# ─────────────────────────────────────────────
def test_weighted_pool_converges_to_grid_posterior():
    # naive fixed to AAA by the prior, one tip reading AAC, Jukes-Cantor, exponential(10) branch prior
    prior = NaivePrior(initial=np.array([1.0, 0, 0, 0]), transitions=np.array([[[1.0, 0, 0, 0]] * 4] * 2))
    msa = Msa(("A",), ("AAC",))
    edges = np.array([0.0, 0.05, 0.1, 0.2, 0.4, np.inf])

    grid = np.linspace(0.0, 5.0, 200001)
    decay = np.exp(-4.0 * grid / 3.0)
    density = np.exp(-10.0 * grid) * (0.25 + 0.75 * decay) ** 2 * (0.25 - 0.25 * decay)
    exact = np.array([density[(grid >= lo) & (grid < hi)].sum() for lo, hi in zip(edges, edges[1:])])
    exact /= exact.sum()

    distances = []
    for n_pool in (100, 1000, 10000):
        rng = np.random.default_rng(n_pool)
        ts = rng.exponential(0.1, size=n_pool)
        pool = weight_pool([single_edge_sample(t) for t in ts], msa, prior, 1)
        w = pool.normalised_weights()
        binned = np.array([w[(ts >= lo) & (ts < hi)].sum() for lo, hi in zip(edges, edges[1:])])
        distances.append(0.5 * np.abs(binned - exact).sum())
    assert distances[2] < distances[0]
    assert distances[2] < 0.05
