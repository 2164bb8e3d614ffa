"""
Validation
==========
Scores inference on simulated replicates against their stored truth:

- naive: hamming distance (DNA and amino acid, whole sequence and an
  optional region) of the phylo-HMM naive estimate and of a star-tree
  baseline
- asr: PPV / TPR of the ancestral lineage prediction for each rho, for the
  phylo-HMM draws and for a fixed-naive baseline
"""

import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from ancestral_sampler import PosteriorDraw, PosteriorRun, run_posterior, sample_fixed_naive
from errors import FrameError, InvalidArgumentError
from hmm_prior import NaivePrior
from phylo_hmm import compute_emissions, star_marginal_estimate, star_naive_estimate, viterbi_naive
from phylogeny import CladeTree, Msa
from proposals.mcmc import McmcConfig, run_mcmc
from reporting import (AsrResult, ValidationConfig, asr_classification, collapse_repeats, hamming,
                       intermediate_sequences, lineage_intermediate_posterior, region_slice, translate_dna)
from simulation import Replicate, load_replicate
from sir_sampler import SirConfig, observed_alignment
from substitution_model import discrete_gamma_rates

logger = logging.getLogger(__name__)

RHOS = (0.25, 0.5, 0.75)


def point_naive(draws: Sequence[PosteriorDraw]) -> str:
    """Most frequent sampled naive sequence; ties go to the lexicographically smallest."""
    counts = Counter(d.naive for d in draws)
    return min(counts, key=lambda s: (-counts[s], s))


def augment(msa: Msa, naive: str, naive_label: str) -> Msa:
    """D*: the observed alignment plus a naive point-estimate row."""
    return observed_alignment(msa, naive_label).with_sequence(naive_label, naive)


def infer_family(msa: Msa, prior: NaivePrior, mcmc: McmcConfig, sir: SirConfig, k_rates: int,
                 naive_label: str = "naive", threads: int = 1, initial_tree: Optional[CladeTree] = None) -> PosteriorRun:
    data = observed_alignment(msa, naive_label)
    d_star = augment(data, star_naive_estimate(data, prior), naive_label)
    samples = run_mcmc(d_star, mcmc, k_rates, naive_label, initial_tree)
    return run_posterior(data, prior, samples, sir, k_rates, naive_label, threads)


# ─────────────────────────────────────────────
#  Naive
# ─────────────────────────────────────────────
def _distances(estimate: str, truth: str, region) -> Dict[str, float]:
    out = {"hamming_dna": hamming(estimate, truth)}
    if region is not None:
        out["hamming_dna_region"] = hamming(region_slice(estimate, region), region_slice(truth, region))
    try:
        est_aa, true_aa = translate_dna(estimate), translate_dna(truth)
    except FrameError:
        return out
    out["hamming_aa"] = hamming(est_aa, true_aa)
    if region is not None:
        out["hamming_aa_region"] = hamming(region_slice(est_aa, region, amino=True),
                                           region_slice(true_aa, region, amino=True))
    return out


def naive_metrics(draws: Sequence[PosteriorDraw], truth: str, prior: NaivePrior, msa: Msa,
                  k_rates: int, config: ValidationConfig, naive_label: str = "naive") -> Dict[str, Dict[str, float]]:
    """Distances to the true naive for the phylo-HMM point estimate, its MAP and the star baseline."""
    data = observed_alignment(msa, naive_label)
    config.check_region(data.n)
    first = draws[0].sample
    em = compute_emissions(first.tree, first.params, discrete_gamma_rates(first.alpha, k_rates), data)
    estimates = {
        "phylohmm": point_naive(draws),
        "phylohmm_map": viterbi_naive(prior, em)[0],
        "star": star_marginal_estimate(data, prior),
    }
    return {method: _distances(seq, truth, config.region) for method, seq in estimates.items()}


# ─────────────────────────────────────────────
#  Ancestral lineages
# ─────────────────────────────────────────────
def farthest_tip(tree: CladeTree) -> str:
    dist = tree.distances_from_naive()
    return min(tree.tip_labels, key=lambda label: (-dist[tree.node_of(label)], label))


def true_lineage(rep: Replicate, tip: str, dna: bool = True) -> List[str]:
    tree = rep.tree
    signatures = tree.clade_signatures()
    seqs = []
    for u in tree.path_from_naive(tip):
        if u == tree.naive:
            seqs.append(rep.naive)
        elif tree.is_leaf(u):
            seqs.append(rep.msa.sequence(tree.labels[u]))
        else:
            seqs.append(rep.internal_truth[signatures[u]])
    if not dna:
        seqs = [translate_dna(s) for s in seqs]
    return intermediate_sequences(collapse_repeats(seqs))


def asr_metrics(draws: Sequence[PosteriorDraw], rep: Replicate, rhos: Sequence[float] = RHOS,
                dna: bool = True, tip: Optional[str] = None) -> List[AsrResult]:
    tip = tip or farthest_tip(rep.tree)
    truth = set(true_lineage(rep, tip, dna))
    posterior = lineage_intermediate_posterior(draws, rep.msa, tip, dna)
    return [asr_classification(posterior, truth, ValidationConfig(rho=rho, lineage_tip=tip)) for rho in rhos]


# ─────────────────────────────────────────────
#  Grid
# ─────────────────────────────────────────────
@dataclass
class ValidationSettings:
    prior: NaivePrior
    mcmc: McmcConfig
    sir: SirConfig
    k_rates: int = 4
    config: ValidationConfig = field(default_factory=ValidationConfig)
    rhos: Sequence[float] = RHOS
    dna: bool = True
    baseline: bool = True
    naive_label: str = "naive"
    threads: int = 1
    kinds: Sequence[str] = ("naive", "asr")


def validate_replicate(path: str, settings: ValidationSettings) -> List[dict]:
    rep = load_replicate(path, settings.naive_label)
    if rep.msa.n != settings.prior.n:
        raise InvalidArgumentError(f"{path}: alignment width {rep.msa.n} != prior length {settings.prior.n}")
    run = infer_family(rep.msa, settings.prior, settings.mcmc, settings.sir, settings.k_rates,
                       settings.naive_label, settings.threads)
    rows = []
    if "naive" in settings.kinds:
        for method, dists in naive_metrics(run.draws, rep.naive, settings.prior, rep.msa, settings.k_rates,
                                           settings.config, settings.naive_label).items():
            rows.extend({"method": method, "metric": m, "rho": math.nan, "value": float(v)} for m, v in dists.items())
    if "asr" not in settings.kinds:
        return rows

    results = {"phylohmm": asr_metrics(run.draws, rep, settings.rhos, settings.dna)}
    if settings.baseline:
        fixed = sample_fixed_naive(run.draws, rep.msa, star_naive_estimate(rep.msa, settings.prior),
                                   settings.k_rates, settings.sir.seed + 1, settings.naive_label, settings.threads)
        results["fixed_naive"] = asr_metrics(fixed, rep, settings.rhos, settings.dna)
    for method, res in results.items():
        for r in res:
            rows.append({"method": method, "metric": "ppv", "rho": r.rho, "value": r.ppv})
            rows.append({"method": method, "metric": "tpr", "rho": r.rho, "value": r.tpr})
            rows.append({"method": method, "metric": "n_predicted", "rho": r.rho, "value": float(r.n_predicted)})
    return rows


def validate_grid(sim_dir: str, settings: ValidationSettings, out_path: str,
                  on_row: Optional[Callable[[dict], None]] = None) -> pd.DataFrame:
    """
    Validate every successfully simulated replicate listed in the manifest and
    write one TSV row per (replicate, method, metric, rho).
    """
    manifest = pd.read_csv(os.path.join(sim_dir, "manifest.tsv"), sep="\t")
    manifest = manifest[manifest["status"] == "ok"]
    rows = []
    for _, entry in manifest.iterrows():
        try:
            rep_rows = validate_replicate(os.path.join(sim_dir, entry["directory"]), settings)
        except Exception as e:
            logger.error(f"Validation of {entry['directory']} failed: {e}")
            continue
        for row in rep_rows:
            row = {"directory": entry["directory"], "beta": entry["beta"], "n_cf": entry["n_cf"],
                   "t0": entry["t0"], "replicate": entry["replicate"], **row}
            rows.append(row)
            if on_row is not None:
                on_row(row)
        logger.info(f"Validated {entry['directory']}")
    columns = ["directory", "beta", "n_cf", "t0", "replicate", "method", "metric", "rho", "value"]
    table = pd.DataFrame(rows, columns=columns)
    table.to_csv(out_path, sep="\t", index=False, float_format="%.6g", na_rep="NaN")
    return table


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """Mean of every (beta, method, metric, rho) cell, NaNs skipped."""
    keyed = table.assign(rho=table["rho"].fillna(-1.0))
    out = keyed.groupby(["beta", "method", "metric", "rho"], as_index=False)["value"].mean()
    out["rho"] = out["rho"].where(out["rho"] >= 0)
    return out
