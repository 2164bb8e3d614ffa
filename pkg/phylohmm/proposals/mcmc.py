"""
Built-in Metropolis-Hastings Proposal Engine
============================================
Samples (tree, branch lengths, pi, e, alpha) from the GTR+Gamma posterior of
the augmented alignment D* (observed sequences plus a point-estimate naive
row).

Priors: uniform unrooted topology, Exponential(lambda) branch lengths and
gamma shape, flat Dirichlet on pi and on e (e kept on the simplex; Q is
unit-rate normalised so the scale of e does not matter).

Moves: NNI on a random internal edge, branch-length multiplier,
Dirichlet-centred pi and e, log-normal random walk on alpha.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from errors import InitializationError, InvalidArgumentError, InvalidParameterError
from phylogeny import CladeTree, Msa, augmented_log_likelihood, random_topology
from proposal_base import PhyloSample, ProposalSource
from substitution_model import GtrParams, build_rate_matrix, discrete_gamma_rates

logger = logging.getLogger(__name__)

CONFIG = {
    "iterations":        50000,
    "thin":              10,
    "burnin":            500,       # retained samples discarded
    "branch_lambda":     10.0,
    "alpha_lambda":      10.0,
    "pi_dirichlet":      (1.0, 1.0, 1.0, 1.0),
    "e_dirichlet":       (1.0,) * 6,
    "move_weights":      {"nni": 1.0, "branch": 4.0, "pi": 1.0, "e": 1.0, "alpha": 1.0},
    "multiplier_tuning": 2.0 * math.log(1.5),
    "pi_concentration":  300.0,
    "e_concentration":   300.0,
    "alpha_sigma":       0.3,
    "k_rates":           4,
    "seed":              0,
}

MOVES = ("nni", "branch", "pi", "e", "alpha")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = CONFIG["iterations"]
    thin: int = CONFIG["thin"]
    burnin: int = CONFIG["burnin"]
    branch_lambda: float = CONFIG["branch_lambda"]
    alpha_lambda: float = CONFIG["alpha_lambda"]
    pi_dirichlet: tuple = CONFIG["pi_dirichlet"]
    e_dirichlet: tuple = CONFIG["e_dirichlet"]
    move_weights: Dict[str, float] = field(default_factory=lambda: dict(CONFIG["move_weights"]))
    multiplier_tuning: float = CONFIG["multiplier_tuning"]
    pi_concentration: float = CONFIG["pi_concentration"]
    e_concentration: float = CONFIG["e_concentration"]
    alpha_sigma: float = CONFIG["alpha_sigma"]
    k_rates: int = CONFIG["k_rates"]
    seed: int = CONFIG["seed"]

    def __post_init__(self):
        if not (self.iterations >= self.thin >= 1):
            raise InvalidParameterError(f"need iterations >= thin >= 1, got {self.iterations}, {self.thin}")
        if self.burnin < 0 or self.burnin >= self.iterations // self.thin:
            raise InvalidParameterError(
                f"burn-in of {self.burnin} samples leaves nothing from {self.iterations // self.thin} recorded")
        if self.branch_lambda <= 0 or self.alpha_lambda <= 0:
            raise InvalidParameterError("exponential prior rates must be positive")
        if len(self.pi_dirichlet) != 4 or len(self.e_dirichlet) != 6:
            raise InvalidParameterError("Dirichlet hyperparameters need 4 (pi) and 6 (e) entries")
        if min(self.pi_dirichlet) <= 0 or min(self.e_dirichlet) <= 0:
            raise InvalidParameterError("Dirichlet hyperparameters must be positive")
        unknown = set(self.move_weights) - set(MOVES)
        if unknown:
            raise InvalidParameterError(f"unknown moves: {sorted(unknown)}")
        if any(w < 0 for w in self.move_weights.values()) or sum(self.move_weights.values()) <= 0:
            raise InvalidParameterError(f"move weights must be non-negative with a positive total")
        if self.multiplier_tuning <= 0 or self.alpha_sigma <= 0:
            raise InvalidParameterError("proposal tuning parameters must be positive")
        if self.k_rates < 1:
            raise InvalidParameterError(f"k_rates must be >= 1, got {self.k_rates}")

    @property
    def n_retained(self) -> int:
        return self.iterations // self.thin - self.burnin

    @classmethod
    def from_dict(cls, values: Dict) -> "McmcConfig":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        if "move_weights" in known:
            known["move_weights"] = {**CONFIG["move_weights"], **known["move_weights"]}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class ChainState:
    tree: CladeTree
    params: GtrParams
    alpha: float
    log_likelihood: float
    log_prior: float

    @property
    def log_posterior(self) -> float:
        return self.log_likelihood + self.log_prior


@dataclass
class McmcRun:
    samples: List[PhyloSample]
    proposed: Dict[str, int]
    accepted: Dict[str, int]

    def acceptance_rates(self) -> Dict[str, float]:
        return {m: self.accepted[m] / self.proposed[m] for m in MOVES if self.proposed[m]}


# ─────────────────────────────────────────────
#  Densities
# ─────────────────────────────────────────────
def log_prior(tree: CladeTree, params: GtrParams, alpha: float, config: McmcConfig) -> float:
    lengths = tree.branch_lengths
    lam, lam_a = config.branch_lambda, config.alpha_lambda
    e = params.e / params.e.sum()
    return float(len(lengths) * math.log(lam) - lam * lengths.sum()
                 + math.log(lam_a) - lam_a * alpha
                 + stats.dirichlet.logpdf(params.pi, config.pi_dirichlet)
                 + stats.dirichlet.logpdf(e, config.e_dirichlet))


def proposal_log_likelihood(tree: CladeTree, params: GtrParams, alpha: float, msa: Msa, k_rates: int) -> float:
    """log q(D* | tree, params, alpha); -inf when alpha yields degenerate rate classes."""
    try:
        rm = discrete_gamma_rates(alpha, k_rates)
    except InvalidParameterError:
        return -math.inf
    return augmented_log_likelihood(tree, build_rate_matrix(params), rm.rates, msa)


def make_state(tree: CladeTree, params: GtrParams, alpha: float, msa: Msa, config: McmcConfig) -> ChainState:
    lp = log_prior(tree, params, alpha, config)
    ll = proposal_log_likelihood(tree, params, alpha, msa, config.k_rates) if math.isfinite(lp) else -math.inf
    return ChainState(tree=tree, params=params, alpha=alpha, log_likelihood=ll, log_prior=lp)


def log_acceptance_ratio(current: ChainState, proposed: ChainState, log_hastings: float) -> float:
    if not math.isfinite(proposed.log_posterior):
        return -math.inf
    return proposed.log_posterior - current.log_posterior + log_hastings


# ─────────────────────────────────────────────
#  Moves: each returns (tree, params, alpha, log Hastings ratio)
# ─────────────────────────────────────────────
def nni_move(state: ChainState, config: McmcConfig, rng: np.random.Generator):
    edges = state.tree.internal_edges()
    edge = edges[int(rng.integers(len(edges)))]
    return state.tree.nni(edge, int(rng.integers(2))), state.params, state.alpha, 0.0


def branch_multiplier_move(state: ChainState, config: McmcConfig, rng: np.random.Generator):
    lengths = state.tree.branch_lengths.copy()
    k = int(rng.integers(len(lengths)))
    log_m = config.multiplier_tuning * (rng.random() - 0.5)
    lengths[k] *= math.exp(log_m)
    return state.tree.with_branch_lengths(lengths), state.params, state.alpha, log_m


def _dirichlet_centred(x: np.ndarray, concentration: float, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
    y = rng.dirichlet(concentration * x)
    y = np.clip(y, 1e-12, None)
    y /= y.sum()
    log_hastings = stats.dirichlet.logpdf(x, concentration * y) - stats.dirichlet.logpdf(y, concentration * x)
    return y, float(log_hastings)


def pi_move(state: ChainState, config: McmcConfig, rng: np.random.Generator):
    pi, log_h = _dirichlet_centred(state.params.pi, config.pi_concentration, rng)
    params = GtrParams(state.params.exchangeabilities, tuple(pi))
    return state.tree, params, state.alpha, log_h


def e_move(state: ChainState, config: McmcConfig, rng: np.random.Generator):
    e = state.params.e / state.params.e.sum()
    new_e, log_h = _dirichlet_centred(e, config.e_concentration, rng)
    params = GtrParams(tuple(new_e), state.params.base_freqs)
    return state.tree, params, state.alpha, log_h


def alpha_move(state: ChainState, config: McmcConfig, rng: np.random.Generator):
    new_alpha = state.alpha * math.exp(config.alpha_sigma * rng.standard_normal())
    return state.tree, state.params, new_alpha, math.log(new_alpha / state.alpha)


MOVE_FUNCTIONS = {
    "nni": nni_move,
    "branch": branch_multiplier_move,
    "pi": pi_move,
    "e": e_move,
    "alpha": alpha_move,
}


# ─────────────────────────────────────────────
#  Chain
# ─────────────────────────────────────────────
def initial_state(msa: Msa, naive_label: str, config: McmcConfig, rng: np.random.Generator,
                  tree: Optional[CladeTree] = None) -> ChainState:
    if tree is None:
        tips = [sid for sid in msa.ids if sid != naive_label]
        tree = random_topology(tips, naive_label, rng, branch_length=1.0 / config.branch_lambda)
    params = GtrParams.from_arrays(np.full(6, 1.0 / 6.0), msa.base_frequencies())
    state = make_state(tree, params, 1.0, msa, config)
    if not math.isfinite(state.log_posterior):
        raise InitializationError(f"initial state has log posterior {state.log_posterior}")
    return state


def run_chain(augmented_msa: Msa, config: McmcConfig, naive_label: str = "naive",
              initial_tree: Optional[CladeTree] = None) -> McmcRun:
    if augmented_msa.m + (naive_label not in augmented_msa.ids) < 3:
        raise InvalidArgumentError("the augmented alignment needs at least 3 sequences including the naive")
    rng = np.random.default_rng(config.seed)
    state = initial_state(augmented_msa, naive_label, config, rng, initial_tree)

    weights = {m: config.move_weights.get(m, 0.0) for m in MOVES}
    if not state.tree.internal_edges():
        weights["nni"] = 0.0
    names = [m for m in MOVES if weights[m] > 0]
    probs = np.array([weights[m] for m in names])
    probs /= probs.sum()

    proposed = {m: 0 for m in MOVES}
    accepted = {m: 0 for m in MOVES}
    samples: List[PhyloSample] = []
    report_every = max(1, config.iterations // 10)
    logger.info(f"MCMC: {config.iterations} iterations, thin {config.thin}, "
                f"burn-in {config.burnin} samples, {augmented_msa.m} sequences x {augmented_msa.n} columns")

    for it in range(config.iterations):
        move = names[int(rng.choice(len(names), p=probs))]
        tree, params, alpha, log_h = MOVE_FUNCTIONS[move](state, config, rng)
        candidate = make_state(tree, params, alpha, augmented_msa, config)
        proposed[move] += 1
        if math.log(rng.random()) < log_acceptance_ratio(state, candidate, log_h):
            state = candidate
            accepted[move] += 1

        if (it + 1) % config.thin == 0:
            recorded = (it + 1) // config.thin
            if recorded > config.burnin:
                samples.append(PhyloSample(tree=state.tree, params=state.params, alpha=state.alpha,
                                           proposal_loglik=state.log_likelihood))
        if (it + 1) % report_every == 0:
            logger.info(f"MCMC {100 * (it + 1) // config.iterations}%: log posterior {state.log_posterior:.4f}")

    run = McmcRun(samples=samples, proposed=proposed, accepted=accepted)
    rates = ", ".join(f"{m} {r:.3f}" for m, r in run.acceptance_rates().items())
    logger.info(f"MCMC done: {len(samples)} samples retained; acceptance {rates}")
    return run


def run_mcmc(augmented_msa: Msa, config: McmcConfig, rm_k: Optional[int] = None,
             naive_label: str = "naive", initial_tree: Optional[CladeTree] = None) -> List[PhyloSample]:
    if rm_k is not None and rm_k != config.k_rates:
        config = replace(config, k_rates=rm_k)
    return run_chain(augmented_msa, config, naive_label, initial_tree).samples


class BuiltinMcmc(ProposalSource):
    """
    Metropolis-Hastings sampler on the augmented alignment. When n_pool is set,
    the iteration count is derived so exactly n_pool samples survive burn-in.
    """

    CONFIG = {**CONFIG, "n_pool": 4500}

    def get_name(self) -> str:
        return "MCMC"

    def get_description(self) -> str:
        return ("Built-in Metropolis-Hastings over topology, branch lengths, GTR parameters "
                "and gamma shape on the augmented alignment.")

    def build_config(self) -> McmcConfig:
        values = dict(self.CONFIG)
        n_pool = values.get("n_pool")
        if n_pool:
            values["iterations"] = (int(n_pool) + int(values["burnin"])) * int(values["thin"])
        return McmcConfig.from_dict(values)

    def draw(self, augmented_msa: Optional[Msa], naive_label: str) -> List[PhyloSample]:
        if augmented_msa is None:
            raise InvalidArgumentError("the MCMC engine needs an augmented alignment")
        return run_mcmc(augmented_msa, self.build_config(), naive_label=naive_label)
