import math
import os

import numpy as np
import pandas as pd
import pytest

from errors import InvalidParameterError
from hmm_prior import uniform_iid_prior
from phylogeny import CladeTree, colless_index, tree_imbalance
from simulation import (GRID, SimulationConfig, assign_branch_lengths, beta_splitting_topology, evolve_sequences,
                        load_replicate, replicate_name, run_experiment_grid, simulate_family)
from substitution_model import GtrParams, discrete_gamma_rates

JC = GtrParams.jukes_cantor()
ONE_RATE = discrete_gamma_rates(1.0, 1)


def single_edge(t):
    return CladeTree(("naive", "seq1"), ((0, 1, t),))


def mean_over_trees(stat, n_cf, beta, count, seed):
    rng = np.random.default_rng(seed)
    return np.mean([stat(beta_splitting_topology(n_cf, beta, rng)) for _ in range(count)])


# ─────────────────────────────────────────────
#  Topologies and branch lengths
# ─────────────────────────────────────────────
def test_two_tips_make_a_cherry():
    tree = beta_splitting_topology(2, -1.0, np.random.default_rng(1))
    assert sorted(tree.tip_labels) == ["seq1", "seq2"]
    assert len(tree.internal_nodes) == 1
    assert colless_index(tree) == 0


def test_topology_size_and_labels():
    tree = beta_splitting_topology(40, -1.25, np.random.default_rng(2))
    assert len(tree.tips) == 40
    assert sorted(tree.tip_labels) == sorted(f"seq{i}" for i in range(1, 41))
    assert len(tree.edges) == 2 * 40 - 1


def test_large_beta_is_more_balanced():
    balanced = mean_over_trees(colless_index, 32, 1e6, 20, seed=3)
    skewed = mean_over_trees(colless_index, 32, -1.5, 20, seed=3)
    assert balanced < skewed


def test_lower_beta_more_imbalanced():
    low = mean_over_trees(tree_imbalance, 40, -1.5, 40, seed=4)
    high = mean_over_trees(tree_imbalance, 40, -1.0, 40, seed=4)
    assert low > high


def test_invalid_beta():
    with pytest.raises(InvalidParameterError):
        beta_splitting_topology(10, -2.0, np.random.default_rng(5))
    with pytest.raises(InvalidParameterError):
        SimulationConfig(M=0.0)


def test_branch_lengths_uniform_with_fixed_naive_branch():
    rng = np.random.default_rng(6)
    topology = beta_splitting_topology(80, -1.0, rng)
    lengths = []
    for _ in range(50):
        tree = assign_branch_lengths(topology, 0.0179, 0.1, rng)
        assert tree.t0 == 0.1
        others = [t for u, v, t in tree.edges if tree.naive not in (u, v)]
        assert all(0.0 <= t <= 2 * 0.0179 for t in others)
        lengths.extend(others)
    sigma = 2 * 0.0179 / math.sqrt(12 * len(lengths))
    assert abs(np.mean(lengths) - 0.0179) < 4 * sigma


def test_zero_mean_gives_zero_lengths():
    topology = beta_splitting_topology(10, -1.0, np.random.default_rng(7))
    tree = assign_branch_lengths(topology, 0.0, 0.0, np.random.default_rng(8))
    assert tree.total_length == 0.0


# ─────────────────────────────────────────────
#  Sequence evolution
# ─────────────────────────────────────────────
def test_jukes_cantor_mismatch_rate():
    n = 20000
    rng = np.random.default_rng(9)
    naive = "".join(rng.choice(list("ACGT"), size=n))
    family = evolve_sequences(single_edge(0.1), naive, JC, ONE_RATE, rng)
    mismatch = np.mean([a != b for a, b in zip(naive, family.msa.sequence("seq1"))])
    expected = 0.75 * (1 - math.exp(-4 * 0.1 / 3))
    assert expected == pytest.approx(0.0936, abs=1e-4)
    assert abs(mismatch - expected) < 4 * math.sqrt(expected * (1 - expected) / n)


def test_zero_branches_copy_naive():
    topology = beta_splitting_topology(12, -1.0, np.random.default_rng(10))
    tree = topology.with_branch_lengths(np.zeros(len(topology.edges)))
    family = evolve_sequences(tree, "ACGTACGTAA", JC, discrete_gamma_rates(0.5, 4), np.random.default_rng(11))
    assert set(family.msa.sequences) == {"ACGTACGTAA"}
    assert set(family.internal_truth.values()) == {"ACGTACGTAA"}
    assert family.msa.ids[:3] == ("seq1", "seq2", "seq3")


def test_long_branch_reaches_stationarity():
    params = GtrParams.from_arrays([1, 2, 1, 1, 2, 1], [0.1, 0.2, 0.3, 0.4])
    n = 20000
    family = evolve_sequences(single_edge(20.0), "A" * n, params, ONE_RATE, np.random.default_rng(12))
    tip = family.msa.sequence("seq1")
    for base, p in zip("ACGT", params.pi):
        assert abs(tip.count(base) / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_site_categories_cover_rate_classes():
    family = evolve_sequences(single_edge(0.1), "A" * 400, JC, discrete_gamma_rates(1.0, 4),
                              np.random.default_rng(13))
    assert set(family.site_categories.tolist()) == {0, 1, 2, 3}


def test_simulate_family_shapes():
    config = SimulationConfig(n_cf=15, t0=0.05)
    tree, naive, family = simulate_family(config, uniform_iid_prior([0.25] * 4, 30), np.random.default_rng(14))
    assert len(naive) == 30
    assert family.msa.m == 15
    assert family.msa.n == 30
    assert tree.t0 == 0.05
    assert len(family.internal_truth) == 14


# ─────────────────────────────────────────────
#  Experiment grid
# ─────────────────────────────────────────────
def test_grid_size():
    cells = len(GRID["beta"]) * len(GRID["n_cf"]) * len(GRID["t0"])
    assert cells == 12
    assert cells * 15 == 180


def test_run_grid_writes_replicates(tmp_path):
    prior = uniform_iid_prior([0.25] * 4, 8)
    out = tmp_path / "sim"
    manifest = run_experiment_grid(SimulationConfig(seed=3), prior, str(out), threads=2)
    assert len(manifest) == 12
    assert (manifest["status"] == "ok").all()
    assert set(manifest["n_cf"]) == {40, 80}
    written = sorted(d for d in os.listdir(out) if os.path.isdir(out / d))
    assert written == sorted(manifest["directory"])
    assert pd.read_csv(out / "manifest.tsv", sep="\t").shape[0] == 12

    name = replicate_name(-1.5, 80, 0.1, 0)
    rep = load_replicate(str(out / name))
    assert rep.msa.m == 80
    assert rep.tree.t0 == pytest.approx(0.1)
    assert rep.meta["beta"] == -1.5
    assert len(rep.internal_truth) == 79
    assert set(rep.internal_truth) == {rep.tree.clade_signatures()[u] for u in rep.tree.internal_nodes}


def test_grid_independent_of_threads(tmp_path):
    prior = uniform_iid_prior([0.25] * 4, 6)
    base = SimulationConfig(seed=5)
    run_experiment_grid(base, prior, str(tmp_path / "a"), threads=1, betas=(-1.0,), n_cfs=(10,), t0s=(0.1,))
    run_experiment_grid(base, prior, str(tmp_path / "b"), threads=3, betas=(-1.0,), n_cfs=(10,), t0s=(0.1,))
    name = replicate_name(-1.0, 10, 0.1, 0)
    for fname in ("msa.fasta", "tree.nwk", "naive.fasta"):
        assert (tmp_path / "a" / name / fname).read_text() == (tmp_path / "b" / name / fname).read_text()
