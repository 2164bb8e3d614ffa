import math
from types import SimpleNamespace

import numpy as np
import pandas as pd

from hmm_prior import uniform_iid_prior
from phylogeny import CladeTree, Msa
from proposals.mcmc import McmcConfig
from reporting import ValidationConfig
from simulation import Replicate, SimulationConfig, run_experiment_grid
from sir_sampler import SirConfig
from validation import (ValidationSettings, augment, farthest_tip, point_naive, summarize, true_lineage,
                        validate_grid)

CHERRY = CladeTree(("naive", None, "A", "B"), ((0, 1, 0.1), (1, 2, 0.2), (1, 3, 0.5)))


def test_point_naive_majority_then_lexicographic():
    draws = [SimpleNamespace(naive=s) for s in ("CCC", "AAA", "CCC", "AAA", "GGG")]
    assert point_naive(draws) == "AAA"
    assert point_naive(draws + [SimpleNamespace(naive="CCC")]) == "CCC"


def test_farthest_tip():
    assert farthest_tip(CHERRY) == "B"


def test_true_lineage_uses_stored_internal_states():
    msa = Msa(("A", "B"), ("ATGGCC", "ATGGCT"))
    rep = Replicate(tree=CHERRY, naive="ATGACC", internal_truth={"A,B": "ATGGCC"}, msa=msa, meta={})
    assert true_lineage(rep, "B") == ["ATGGCC"]
    assert true_lineage(rep, "A") == []
    # the internal node and tip B share a translation
    assert true_lineage(rep, "B", dna=False) == []


def test_augment_replaces_naive_row():
    msa = Msa(("A", "naive"), ("ACGT", "AAAA"))
    out = augment(msa, "CCCC", "naive")
    assert out.sequence("naive") == "CCCC"
    assert out.ids == ("A", "naive")


def test_settings_get_their_own_default_config():
    prior = uniform_iid_prior([0.25] * 4, 3)
    first = ValidationSettings(prior=prior, mcmc=McmcConfig(), sir=SirConfig(n_pool=20))
    second = ValidationSettings(prior=prior, mcmc=McmcConfig(), sir=SirConfig(n_pool=20))
    assert first.config == ValidationConfig()
    assert first.config is not second.config


def test_validate_grid_end_to_end(tmp_path):
    prior = uniform_iid_prior([0.25] * 4, 6)
    sim_dir = tmp_path / "sim"
    run_experiment_grid(SimulationConfig(seed=2), prior, str(sim_dir), betas=(-1.0,), n_cfs=(4,), t0s=(0.1,))

    settings = ValidationSettings(prior=prior, mcmc=McmcConfig(iterations=60, thin=2, burnin=5, seed=4),
                                  sir=SirConfig(n_pool=25, n_final=5, seed=6), k_rates=2)
    seen = []
    table = validate_grid(str(sim_dir), settings, str(tmp_path / "validation.tsv"), on_row=seen.append)
    assert len(seen) == len(table) > 0
    assert set(table["method"]) == {"phylohmm", "phylohmm_map", "star", "fixed_naive"}
    assert {"hamming_dna", "hamming_aa", "ppv", "tpr", "n_predicted"} <= set(table["metric"])

    hamming = table[table["metric"] == "hamming_dna"]
    assert hamming["value"].between(0, 6).all()
    assert hamming["rho"].isna().all()
    tpr = table[table["metric"] == "tpr"]
    assert set(tpr["rho"]) == {0.25, 0.5, 0.75}

    written = pd.read_csv(tmp_path / "validation.tsv", sep="\t")
    assert len(written) == len(table)

    summary = summarize(table)
    star = summary[(summary["method"] == "star") & (summary["metric"] == "hamming_dna")]
    assert len(star) == 1 and math.isnan(star["rho"].iloc[0])


def test_validate_naive_only(tmp_path):
    prior = uniform_iid_prior([0.25] * 4, 6)
    sim_dir = tmp_path / "sim"
    run_experiment_grid(SimulationConfig(seed=3), prior, str(sim_dir), betas=(-1.0,), n_cfs=(4,), t0s=(0.1,))
    settings = ValidationSettings(prior=prior, mcmc=McmcConfig(iterations=60, thin=2, burnin=5),
                                  sir=SirConfig(n_pool=25, n_final=5), k_rates=1, kinds=("naive",))
    table = validate_grid(str(sim_dir), settings, str(tmp_path / "v.tsv"))
    assert not table["metric"].isin(["ppv", "tpr"]).any()
    assert np.all(table["value"] >= 0)
