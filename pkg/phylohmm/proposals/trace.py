"""
External Trace Proposal Engine
==============================
Reads proposal draws produced by an external sampler: a Newick file with one
tree per line and a tab-separated parameter file whose row k belongs to tree
line k.

Parameter columns: alpha, pi_A, pi_C, pi_G, pi_T, e_AC, e_AG, e_AT, e_CG,
e_CT, e_GT and optionally loglik. Without loglik the proposal log-likelihood
is recomputed on the augmented alignment.
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import InvalidParameterError, TraceFormatError
from phylogeny import Msa, augmented_log_likelihood, read_newick_file, serialize_newick
from proposal_base import PhyloSample, ProposalSource
from substitution_model import EXCHANGEABILITY_NAMES, NUCLEOTIDES, GtrParams, build_rate_matrix, discrete_gamma_rates

logger = logging.getLogger(__name__)

PI_COLUMNS = [f"pi_{b}" for b in NUCLEOTIDES]
E_COLUMNS = [f"e_{n}" for n in EXCHANGEABILITY_NAMES]
PARAM_COLUMNS = ["alpha"] + PI_COLUMNS + E_COLUMNS
SIMPLEX_TOLERANCE = 1e-6


def _row_sample(row: pd.Series, row_no: int, tree, msa: Optional[Msa], k_rates: int) -> PhyloSample:
    pi = row[PI_COLUMNS].to_numpy(dtype=float)
    e = row[E_COLUMNS].to_numpy(dtype=float)
    alpha = float(row["alpha"])
    if not np.all(np.isfinite(pi)) or abs(pi.sum() - 1.0) > SIMPLEX_TOLERANCE:
        raise TraceFormatError(f"row {row_no}: base frequencies sum to {pi.sum():.6g}, expected 1")
    try:
        params = GtrParams.from_arrays(e, pi)
        loglik = row.get("loglik", math.nan)
        if loglik is None or not math.isfinite(float(loglik)):
            if msa is None:
                raise TraceFormatError(f"row {row_no}: no loglik column and no alignment to recompute it")
            rm = discrete_gamma_rates(alpha, k_rates)
            loglik = augmented_log_likelihood(tree, build_rate_matrix(params), rm.rates, msa)
        return PhyloSample(tree=tree, params=params, alpha=alpha, proposal_loglik=float(loglik))
    except InvalidParameterError as exc:
        raise TraceFormatError(f"row {row_no}: {exc}") from None


def load_trace(newick_file, params_file, naive_label: str = "naive",
               augmented_msa: Optional[Msa] = None, k_rates: int = 4) -> List[PhyloSample]:
    trees = read_newick_file(newick_file, naive_label)
    try:
        table = pd.read_csv(params_file, sep="\t")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise TraceFormatError(f"{params_file}: {exc}") from None
    table.columns = [c.strip() for c in table.columns]
    missing = [c for c in PARAM_COLUMNS if c not in table.columns]
    if missing:
        raise TraceFormatError(f"{params_file}: missing columns {missing}")
    if len(table) != len(trees):
        raise TraceFormatError(f"{len(trees)} trees but {len(table)} parameter rows")

    samples = [_row_sample(row, k + 1, trees[k], augmented_msa, k_rates)
               for k, (_, row) in enumerate(table.iterrows())]
    logger.info(f"Loaded {len(samples)} proposal samples from {newick_file} / {params_file}")
    return samples


def write_trace(samples: Sequence[PhyloSample], newick_file, params_file,
                log_weights: Optional[Sequence[float]] = None) -> None:
    """Tree file plus parameter TSV; a log_weight column is added when weights are given."""
    with open(newick_file, "w") as fh:
        for sample in samples:
            fh.write(serialize_newick(sample.tree) + "\n")
    rows = []
    for k, sample in enumerate(samples):
        row = {"alpha": sample.alpha, **sample.params.as_dict(), "loglik": sample.proposal_loglik}
        if log_weights is not None:
            row["log_weight"] = log_weights[k]
        rows.append(row)
    columns = PARAM_COLUMNS + ["loglik"] + (["log_weight"] if log_weights is not None else [])
    pd.DataFrame(rows, columns=columns).to_csv(params_file, sep="\t", index=False, float_format="%.17g")


class TraceProposal(ProposalSource):
    """Replays an external trace (trees file + parameter TSV)."""

    CONFIG = {
        "trees_file":  None,
        "params_file": None,
        "n_pool":      None,        # None keeps every row; otherwise the last n_pool rows
        "k_rates":     4,
        "seed":        0,
    }

    def get_name(self) -> str:
        return "Trace"

    def get_description(self) -> str:
        return "Proposal draws read from an external MCMC trace (Newick trees + parameter TSV)."

    def draw(self, augmented_msa: Optional[Msa], naive_label: str) -> List[PhyloSample]:
        trees_file, params_file = self.CONFIG.get("trees_file"), self.CONFIG.get("params_file")
        if not trees_file or not params_file:
            raise TraceFormatError("trace engine needs trees_file and params_file")
        samples = load_trace(trees_file, params_file, naive_label, augmented_msa, int(self.CONFIG["k_rates"]))
        n_pool = self.CONFIG.get("n_pool")
        if n_pool:
            if len(samples) < int(n_pool):
                logger.warning(f"Trace has {len(samples)} samples, fewer than the requested pool of {n_pool}")
            samples = samples[-int(n_pool):]
        return samples
