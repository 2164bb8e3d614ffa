"""
Simulation
==========
Synthetic clonal families: beta-splitting topologies, Uniform(0, 2M) branch
lengths, naive sequences drawn from the naive prior, and GTR+Gamma sequence
evolution from the naive leaf towards the tips. Also runs the experiment grid
and writes one directory per replicate.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import InvalidParameterError, SimulationError
from hmm_prior import NaivePrior, sample_naive_prior
from phylogeny import CladeTree, Msa, colless_index, parse_newick, read_fasta, serialize_newick, tree_imbalance, write_fasta
from substitution_model import NUCLEOTIDES, GtrParams, RateModel, build_rate_matrix, discrete_gamma_rates
from worker_pool import run_tasks

logger = logging.getLogger(__name__)

CONFIG = {
    "beta":          -1.0,
    "n_cf":          40,
    "t0":            0.01759,
    "M":             0.0179,       # mean branch length
    "k_rates":       4,
    "alpha":         1.0,
    "replicates":    1,
    "seed":          0,
    "max_redraws":   10_000,
}

GRID = {
    "beta": (-1.5, -1.25, -1.0),
    "n_cf": (40, 80),
    "t0":   (0.01759, 0.1),
}


@dataclass(frozen=True)
class SimulationConfig:
    beta: float = CONFIG["beta"]
    n_cf: int = CONFIG["n_cf"]
    t0: float = CONFIG["t0"]
    M: float = CONFIG["M"]
    k_rates: int = CONFIG["k_rates"]
    alpha: float = CONFIG["alpha"]
    params: GtrParams = field(default_factory=GtrParams.jukes_cantor)
    replicates: int = CONFIG["replicates"]
    seed: int = CONFIG["seed"]

    def __post_init__(self):
        if not self.beta > -2:
            raise InvalidParameterError(f"beta must exceed -2, got {self.beta}")
        if self.n_cf < 2:
            raise InvalidParameterError(f"need at least 2 tips, got {self.n_cf}")
        if not (math.isfinite(self.t0) and self.t0 >= 0):
            raise InvalidParameterError(f"t0 must be non-negative, got {self.t0}")
        if not self.M > 0:
            raise InvalidParameterError(f"M must be positive, got {self.M}")
        if self.replicates < 1:
            raise InvalidParameterError(f"replicates must be positive, got {self.replicates}")

    @property
    def rate_model(self) -> RateModel:
        return discrete_gamma_rates(self.alpha, self.k_rates)


@dataclass(frozen=True, eq=False)
class EvolvedFamily:
    msa: Msa
    internal_truth: Dict[int, str]
    site_categories: np.ndarray


# ─────────────────────────────────────────────
#  Trees
# ─────────────────────────────────────────────
def beta_splitting_topology(n_cf: int, beta: float, rng: np.random.Generator,
                            naive_label: str = "naive", max_redraws: int = CONFIG["max_redraws"]) -> CladeTree:
    """
    Scatter n_cf uniform points on (0, 1) and split intervals recursively at
    Beta(beta + 1, beta + 1) positions until every part holds one point. A
    split that leaves one side empty is redrawn. Tips are seq1..seqN from left
    to right; the naive leaf hangs off the root. All branch lengths are 1.
    """
    if n_cf < 2:
        raise InvalidParameterError(f"need at least 2 tips, got {n_cf}")
    if not beta > -2:
        raise InvalidParameterError(f"beta must exceed -2, got {beta}")
    points = np.sort(rng.random(n_cf))

    labels: List[Optional[str]] = [naive_label, None]
    edges = [(0, 1)]
    stack = [(1, points, 0.0, 1.0)]
    leaves = []
    while stack:
        node, pts, lo, hi = stack.pop()
        for _ in range(max_redraws):
            cut = lo + (hi - lo) * rng.beta(beta + 1.0, beta + 1.0)
            left, right = pts[pts < cut], pts[pts >= cut]
            if left.size and right.size:
                break
        else:
            raise SimulationError(f"no non-empty split of {pts.size} points after {max_redraws} redraws")
        for part, a, b in ((right, cut, hi), (left, lo, cut)):
            labels.append(None)
            child = len(labels) - 1
            edges.append((node, child))
            if part.size == 1:
                leaves.append((float(part[0]), child))
            else:
                stack.append((child, part, a, b))

    for rank, (_, node) in enumerate(sorted(leaves), start=1):
        labels[node] = f"seq{rank}"
    return CladeTree(tuple(labels), tuple((u, v, 1.0) for u, v in edges), naive_label)


def assign_branch_lengths(tree: CladeTree, M: float, t0: float, rng: np.random.Generator) -> CladeTree:
    """Uniform(0, 2M) on every branch except the naive branch, which gets t0."""
    naive = tree.naive
    lengths = rng.uniform(0.0, 2.0 * M, size=len(tree.edges))
    lengths = [t0 if naive in (u, v) else float(t) for (u, v, _), t in zip(tree.edges, lengths)]
    return tree.with_branch_lengths(lengths)


# ─────────────────────────────────────────────
#  Sequences
# ─────────────────────────────────────────────
def _draw_children(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(rows, axis=1)
    u = rng.random(rows.shape[0]) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), 3)


def evolve_sequences(tree: CladeTree, naive: str, params: GtrParams, rm: RateModel,
                     rng: np.random.Generator) -> EvolvedFamily:
    """
    Each column gets a uniformly drawn rate class; states then flow tipward
    from the naive leaf along rate-scaled branches.
    """
    q = build_rate_matrix(params)
    n = len(naive)
    categories = rng.integers(0, rm.k, size=n)
    view = tree.rooted(tree.naive)
    states = np.zeros((tree.n_nodes, n), dtype=int)
    states[tree.naive] = [NUCLEOTIDES.index(c) for c in naive]
    for u in view.preorder[1:]:
        parent_states = states[view.parent[u]]
        child = np.empty(n, dtype=int)
        for k, rate in enumerate(rm.rates):
            cols = np.flatnonzero(categories == k)
            if cols.size:
                p = q.transition(view.length[u] * rate)
                child[cols] = _draw_children(p[parent_states[cols]], rng)
        states[u] = child

    def seq(u: int) -> str:
        return "".join(NUCLEOTIDES[s] for s in states[u])

    tips = tree.tips
    order = sorted(tips, key=lambda u: _natural_key(tree.labels[u]))
    msa = Msa(tuple(tree.labels[u] for u in order), tuple(seq(u) for u in order))
    return EvolvedFamily(msa=msa, internal_truth={u: seq(u) for u in tree.internal_nodes},
                         site_categories=categories)


def _natural_key(label: str):
    digits = "".join(c for c in label if c.isdigit())
    return (label.rstrip("0123456789"), int(digits) if digits else -1, label)


def simulate_family(config: SimulationConfig, prior: NaivePrior, rng: np.random.Generator,
                    naive_label: str = "naive"):
    topology = beta_splitting_topology(config.n_cf, config.beta, rng, naive_label)
    tree = assign_branch_lengths(topology, config.M, config.t0, rng)
    naive = sample_naive_prior(prior, rng)
    family = evolve_sequences(tree, naive, config.params, config.rate_model, rng)
    return tree, naive, family


# ─────────────────────────────────────────────
#  Replicate I/O
# ─────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class Replicate:
    tree: CladeTree
    naive: str
    internal_truth: Dict[str, str]       # clade signature -> sequence
    msa: Msa
    meta: dict


def write_replicate(out_dir: str, tree: CladeTree, naive: str, family: EvolvedFamily, meta: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "tree.nwk"), "w") as fh:
        fh.write(serialize_newick(tree) + "\n")
    write_fasta(os.path.join(out_dir, "naive.fasta"), [(tree.naive_label, naive)])
    write_fasta(os.path.join(out_dir, "msa.fasta"), zip(family.msa.ids, family.msa.sequences))
    signatures = tree.clade_signatures()
    truth = pd.DataFrame([(signatures[u], s) for u, s in family.internal_truth.items()],
                         columns=["clade", "sequence"])
    truth.to_csv(os.path.join(out_dir, "internal_truth.tsv"), sep="\t", index=False)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_replicate(path: str, naive_label: str = "naive") -> Replicate:
    with open(os.path.join(path, "tree.nwk")) as fh:
        tree = parse_newick(fh.read(), naive_label)
    naive = read_fasta(os.path.join(path, "naive.fasta")).sequences[0]
    truth = pd.read_csv(os.path.join(path, "internal_truth.tsv"), sep="\t", dtype=str, keep_default_na=False)
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    return Replicate(tree=tree, naive=naive, internal_truth=dict(zip(truth["clade"], truth["sequence"])),
                     msa=read_fasta(os.path.join(path, "msa.fasta")), meta=meta)


def replicate_name(beta: float, n_cf: int, t0: float, replicate: int) -> str:
    return f"beta{beta:g}_n{n_cf}_t0{t0:g}_rep{replicate}"


def run_replicate(config: SimulationConfig, prior: NaivePrior, out_dir: str, seed_seq: np.random.SeedSequence,
                  naive_label: str = "naive") -> dict:
    rng = np.random.default_rng(seed_seq)
    tree, naive, family = simulate_family(config, prior, rng, naive_label)
    meta = {
        "beta": config.beta,
        "n_cf": config.n_cf,
        "t0": config.t0,
        "M": config.M,
        "alpha": config.alpha,
        "k_rates": config.k_rates,
        "seed": config.seed,
        "spawn_key": list(seed_seq.spawn_key),
        "imbalance": tree_imbalance(tree),
        "colless": colless_index(tree),
    }
    write_replicate(out_dir, tree, naive, family, meta)
    return meta


def run_experiment_grid(base: SimulationConfig, prior: NaivePrior, out_dir: str, threads: int = 1,
                        betas: Sequence[float] = GRID["beta"], n_cfs: Sequence[int] = GRID["n_cf"],
                        t0s: Sequence[float] = GRID["t0"], naive_label: str = "naive") -> pd.DataFrame:
    """
    Simulate base.replicates families for every (beta, N_CF, t0) cell and
    write manifest.tsv. A replicate that fails is listed with its error.
    """
    cells = [(b, n, t) for b in betas for n in n_cfs for t in t0s]
    jobs = [(c, r) for c in range(len(cells)) for r in range(base.replicates)]
    streams = np.random.SeedSequence(base.seed).spawn(len(jobs))
    os.makedirs(out_dir, exist_ok=True)

    def task(k: int) -> dict:
        c, r = jobs[k]
        beta, n_cf, t0 = cells[c]
        cfg = SimulationConfig(beta=beta, n_cf=n_cf, t0=t0, M=base.M, k_rates=base.k_rates, alpha=base.alpha,
                               params=base.params, replicates=1, seed=base.seed)
        return run_replicate(cfg, prior, os.path.join(out_dir, replicate_name(beta, n_cf, t0, r)),
                             streams[k], naive_label)

    results = run_tasks(task, range(len(jobs)), threads, label="simulate")
    rows = []
    for (c, r), res in zip(jobs, results):
        beta, n_cf, t0 = cells[c]
        rows.append({
            "directory": replicate_name(beta, n_cf, t0, r),
            "beta": beta, "n_cf": n_cf, "t0": t0, "replicate": r,
            "imbalance": res.value["imbalance"] if res.ok else float("nan"),
            "status": "ok" if res.ok else f"failed: {res.error}",
        })
    manifest = pd.DataFrame(rows)
    manifest.to_csv(os.path.join(out_dir, "manifest.tsv"), sep="\t", index=False, float_format="%.6g")
    logger.info(f"Simulated {int((manifest['status'] == 'ok').sum())}/{len(manifest)} replicates into {out_dir}")
    return manifest
