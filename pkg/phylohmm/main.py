"""
phylohmm: command-line entry point
==================================
Commands:
  simulate         simulate clonal families (one cell or the full grid)
  propose          run the built-in MCMC on D* and write a proposal trace
  ingest-trace     check an external trace and rewrite it in canonical form
  sample           SIR + naive + ancestral sampling, end to end
  report           naive | logo | lineage summaries of a draw archive
  validate         naive | asr metrics over a simulated grid
  oracle           brute-force reference computations on tiny instances
  make-demo-prior  write a synthetic germline-anchored naive prior
"""

import argparse
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

# Add own directory to path so bare module imports work
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import db
import oracle
from ancestral_sampler import read_archive, run_posterior, write_archive
from errors import InvalidArgumentError, PhyloHmmError
from hmm_prior import demo_prior, load_prior, write_prior
from phylo_hmm import compute_emissions, forward, star_naive_estimate, viterbi_naive
from phylogeny import naive_conditional_site_likelihood, read_fasta
from proposal_manager import ProposalManager
from proposals.mcmc import CONFIG as MCMC_CONFIG, McmcConfig
from proposals.trace import load_trace, write_trace
from reporting import (ValidationConfig, lineage_fasta, lineage_report, naive_posterior_report, write_matrix,
                       write_naive_report)
from simulation import GRID, SimulationConfig, run_experiment_grid
from sir_sampler import SirConfig, observed_alignment, write_posterior_pool
from substitution_model import build_rate_matrix, discrete_gamma_rates
from validation import RHOS, ValidationSettings, augment, summarize, validate_grid

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"


# ─────────────────────────────────────────────
#  Setup
# ─────────────────────────────────────────────
def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    value = os.getenv(name)
    if value in (None, ""):
        return default
    try:
        return int(value)
    except ValueError:
        raise InvalidArgumentError(f"environment variable {name} must be an integer, got {value!r}") from None


def configure_logging(verbose: bool, log_file: Optional[str]) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handlers.append(RotatingFileHandler(
            log_file,
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5,
        ))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT,
                        handlers=handlers, force=True)


def parse_region(text: Optional[str]) -> Optional[Tuple[int, int]]:
    """'START-END' or 'START:END', 1-based inclusive."""
    if not text:
        return None
    for sep in ("-", ":"):
        if sep in text:
            start, end = text.split(sep, 1)
            try:
                return int(start), int(end)
            except ValueError:
                break
    raise InvalidArgumentError(f"region must look like START-END, got {text!r}")


def _load_prior(args, n: int):
    if not args.prior:
        raise InvalidArgumentError("this command needs --prior (or PHYLOHMM_PRIOR)")
    return load_prior(args.prior, expected_length=n)


def _read_naive(path: str) -> str:
    return read_fasta(path).sequences[0]


def _sir_config(args) -> SirConfig:
    return SirConfig(n_pool=args.n_pool, n_final=args.n_final, seed=args.seed)


def _mcmc_overrides(args) -> dict:
    values = {"seed": args.seed, "k_rates": args.k_rates}
    for key in ("iterations", "thin", "burnin"):
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    return values


def _engine_config(args) -> dict:
    """Builtin engine settings; an explicit --iterations wins over the n_pool-derived count."""
    return {**_mcmc_overrides(args), "n_pool": None if getattr(args, "iterations", None) else args.n_pool}


def _mcmc_config(args) -> McmcConfig:
    values = {**MCMC_CONFIG, **_mcmc_overrides(args)}
    if getattr(args, "iterations", None) is None:
        values["iterations"] = (args.n_pool + int(values["burnin"])) * int(values["thin"])
    return McmcConfig.from_dict(values)


def _augmented(args, data):
    naive = _read_naive(args.naive) if args.naive else star_naive_estimate(data, _load_prior(args, data.n))
    return augment(data, naive, args.naive_id)


# ─────────────────────────────────────────────
#  Commands
# ─────────────────────────────────────────────
def cmd_simulate(args, ledger) -> None:
    if args.prior:
        prior = load_prior(args.prior)
    else:
        prior = demo_prior(args.length, seed=args.seed)
        logger.info(f"No prior given; using a demo prior of length {args.length}")
    base = SimulationConfig(beta=args.beta, n_cf=args.n_cf, t0=args.t0, M=args.M, k_rates=args.k_rates,
                            alpha=args.alpha, replicates=args.replicates, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_prior(prior, os.path.join(args.out, "prior.json"))
    if args.grid:
        manifest = run_experiment_grid(base, prior, args.out, args.threads, naive_label=args.naive_id)
    else:
        manifest = run_experiment_grid(base, prior, args.out, args.threads, betas=(args.beta,),
                                       n_cfs=(args.n_cf,), t0s=(args.t0,), naive_label=args.naive_id)
    failed = int((manifest["status"] != "ok").sum())
    ledger.event("INFO" if not failed else "WARNING", f"simulated {len(manifest)} replicates, {failed} failed")


def cmd_propose(args, ledger) -> None:
    data = observed_alignment(read_fasta(args.msa), args.naive_id)
    d_star = _augmented(args, data)
    manager = ProposalManager()
    manager.set_active_engine("mcmc", _engine_config(args))
    samples = manager.draw(d_star, args.naive_id)
    write_trace(samples, args.out_trees, args.out_params)
    ledger.event("INFO", f"wrote {len(samples)} proposal samples to {args.out_trees}")


def cmd_ingest_trace(args, ledger) -> None:
    d_star = None
    if args.msa:
        d_star = _augmented(args, observed_alignment(read_fasta(args.msa), args.naive_id))
    samples = load_trace(args.trees, args.params, args.naive_id, d_star, args.k_rates)
    write_trace(samples, args.out_trees, args.out_params)
    ledger.event("INFO", f"ingested {len(samples)} trace samples")


def cmd_sample(args, ledger) -> None:
    msa = read_fasta(args.msa, parse_region(args.region))
    data = observed_alignment(msa, args.naive_id)
    prior = _load_prior(args, data.n)
    d_star = _augmented(args, data)

    manager = ProposalManager()
    if args.trees:
        if not args.params:
            raise InvalidArgumentError("--trees needs --params")
        manager.set_active_engine("trace", {"trees_file": args.trees, "params_file": args.params,
                                            "n_pool": args.n_pool, "k_rates": args.k_rates})
    else:
        manager.set_active_engine("mcmc", _engine_config(args))
    samples = manager.draw(d_star, args.naive_id)

    run = run_posterior(data, prior, samples, _sir_config(args), args.k_rates, args.naive_id, args.threads)
    write_archive(run.draws, f"{args.out}.draws.jsonl")
    write_posterior_pool(run.pool, run.selected, f"{args.out}.pool.nwk", f"{args.out}.pool.tsv")
    write_naive_report(naive_posterior_report(run.draws, dna=args.dna), f"{args.out}.naive")
    ledger.sir(run.diagnostics)
    ledger.event("INFO", f"sampled {len(run.draws)} posterior draws into {args.out}.draws.jsonl")


def cmd_report(args, ledger) -> None:
    draws = read_archive(args.draws, args.naive_id)
    if args.kind == "naive":
        write_naive_report(naive_posterior_report(draws, dna=args.dna), args.out)
    elif args.kind == "logo":
        write_matrix(naive_posterior_report(draws, dna=args.dna).matrix, args.out)
    else:
        if not args.msa:
            raise InvalidArgumentError("report lineage needs --msa")
        config = ValidationConfig(lineage_tip=args.tip, lineage_cutoff=args.cutoff)
        summary, dot = lineage_report(draws, read_fasta(args.msa), config, dna=args.dna)
        with open(f"{args.out}.dot", "w") as fh:
            fh.write(dot)
        with open(f"{args.out}.fasta", "w") as fh:
            fh.write(lineage_fasta(summary))
    ledger.event("INFO", f"{args.kind} report from {len(draws)} draws")


def cmd_validate(args, ledger) -> None:
    prior_path = args.prior or os.path.join(args.sim_dir, "prior.json")
    rhos = tuple(float(r) for r in args.rho.split(",")) if args.rho else RHOS
    settings = ValidationSettings(
        prior=load_prior(prior_path),
        mcmc=_mcmc_config(args),
        sir=_sir_config(args),
        k_rates=args.k_rates,
        config=ValidationConfig(region=parse_region(args.region)),
        rhos=rhos,
        dna=not args.amino,
        baseline=args.baseline == "fixed-naive",
        naive_label=args.naive_id,
        threads=args.threads,
        kinds=(args.kind,),
    )
    table = validate_grid(args.sim_dir, settings, args.out)
    summary = summarize(table)
    summary.to_csv(f"{os.path.splitext(args.out)[0]}.summary.tsv", sep="\t", index=False,
                   float_format="%.6g", na_rep="NaN")
    ledger.validation(table.to_dict("records"))
    ledger.event("INFO", f"validate {args.kind}: {len(table)} rows")


def cmd_oracle(args, ledger) -> None:
    """Fast and brute-force values side by side, one line per instance."""
    rng = np.random.default_rng(args.seed)
    print("instance\tforward\tbrute_force\tviterbi\tbrute_viterbi\tsite_lik\tbrute_site_lik")
    worst = 0.0
    for k in range(args.instances):
        tree, params, msa, prior = oracle.random_instance(rng, args.m, args.n, args.naive_id)
        rm = discrete_gamma_rates(float(rng.uniform(0.3, 3.0)), args.k_rates)
        em = compute_emissions(tree, params, rm, msa)
        fast = forward(prior, em).log_likelihood
        brute = oracle.forward_log_likelihood(prior, oracle.emission_table(tree, params, rm.rates, msa))
        seq, _ = viterbi_naive(prior, em)
        brute_seq, _ = oracle.viterbi(prior, em.log_emissions)
        q = build_rate_matrix(params)
        site = naive_conditional_site_likelihood(tree, msa, 0, 0, q, rm.rates[0])
        brute_site = oracle.naive_conditional_site_likelihood(tree, msa, 0, 0, q, rm.rates[0])
        worst = max(worst, abs(fast - brute) / max(1.0, abs(brute)))
        print(f"{k}\t{fast:.12g}\t{brute:.12g}\t{seq}\t{brute_seq}\t{site:.12g}\t{brute_site:.12g}")
    logger.info(f"Oracle: worst relative forward error {worst:.3g} over {args.instances} instances")
    ledger.event("INFO", f"oracle worst relative error {worst:.3g}")


def cmd_make_demo_prior(args, ledger) -> None:
    write_prior(demo_prior(args.length, seed=args.seed, template_weight=args.template_weight,
                           junction=parse_region(args.junction)), args.out)
    ledger.event("INFO", f"wrote demo prior of length {args.length} to {args.out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "propose": cmd_propose,
    "ingest-trace": cmd_ingest_trace,
    "sample": cmd_sample,
    "report": cmd_report,
    "validate": cmd_validate,
    "oracle": cmd_oracle,
    "make-demo-prior": cmd_make_demo_prior,
}


# ─────────────────────────────────────────────
#  Ledger
# ─────────────────────────────────────────────
class Ledger:
    """Best-effort run bookkeeping; failures are logged and never propagate."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.run_id: Optional[int] = None

    def _call(self, fn, *args):
        if not self.enabled:
            return None
        try:
            return fn(*args)
        except Exception as e:
            logger.warning(f"Run ledger unavailable: {e}")
            self.enabled = False
            return None

    def start(self, command: str, seed: int, arguments: dict) -> None:
        self._call(db.init_db)
        self.run_id = self._call(db.start_run, command, seed, arguments)

    def event(self, level: str, message: str) -> None:
        self._call(db.log_event, level, message, self.run_id)

    def sir(self, diagnostics) -> None:
        self._call(db.record_sir_diagnostics, self.run_id, diagnostics)

    def validation(self, rows) -> None:
        self._call(db.record_validation, self.run_id, rows)

    def finish(self, status: str, message: str = "") -> None:
        if self.run_id is not None:
            self._call(db.finish_run, self.run_id, status, message)


# ─────────────────────────────────────────────
#  Parser
# ─────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phylohmm", description="Clonal phylo-HMM naive and ancestral inference")
    parser.add_argument("--seed", type=int, default=_env_int("PHYLOHMM_SEED", 0))
    parser.add_argument("--threads", type=int, default=_env_int("PHYLOHMM_THREADS", 1))
    parser.add_argument("--prior", default=os.getenv("PHYLOHMM_PRIOR"), help="naive prior JSON")
    parser.add_argument("--naive-id", default=os.getenv("PHYLOHMM_NAIVE_ID", "naive"))
    parser.add_argument("--k-rates", type=int, default=_env_int("PHYLOHMM_K_RATES", 4))
    parser.add_argument("--n-pool", type=int, default=_env_int("PHYLOHMM_N_POOL", 4500))
    parser.add_argument("--n-final", type=int, default=_env_int("PHYLOHMM_N_FINAL", None))
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--log-file", default=os.getenv("PHYLOHMM_LOG_FILE", "data/phylohmm.log"))
    sub = parser.add_subparsers(dest="command", required=True)

    def mcmc_flags(p):
        p.add_argument("--iterations", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--burnin", type=int)

    p = sub.add_parser("simulate", help="simulate clonal families")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", action="store_true", help="every (beta, N_CF, t0) cell of the experiment grid")
    p.add_argument("--beta", type=float, default=GRID["beta"][-1])
    p.add_argument("--n-cf", type=int, default=GRID["n_cf"][0])
    p.add_argument("--t0", type=float, default=GRID["t0"][0])
    p.add_argument("--M", type=float, default=SimulationConfig.M)
    p.add_argument("--alpha", type=float, default=SimulationConfig.alpha)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--length", type=int, default=300, help="naive length when no prior is given")

    p = sub.add_parser("propose", help="built-in MCMC proposal trace")
    p.add_argument("--msa", required=True)
    p.add_argument("--naive", help="FASTA with the D* naive row (default: star-tree estimate)")
    p.add_argument("--out-trees", required=True)
    p.add_argument("--out-params", required=True)
    mcmc_flags(p)

    p = sub.add_parser("ingest-trace", help="check and rewrite an external trace")
    p.add_argument("--trees", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--msa", help="recompute missing proposal log-likelihoods against D*")
    p.add_argument("--naive")
    p.add_argument("--out-trees", required=True)
    p.add_argument("--out-params", required=True)

    p = sub.add_parser("sample", help="SIR + naive + ancestral sampling")
    p.add_argument("--msa", required=True)
    p.add_argument("--naive")
    p.add_argument("--trees", help="external trace trees (default: run the built-in MCMC)")
    p.add_argument("--params")
    p.add_argument("--region")
    p.add_argument("--dna", action="store_true")
    p.add_argument("--out", required=True, help="output prefix")
    mcmc_flags(p)

    p = sub.add_parser("report", help="posterior summaries of a draw archive")
    p.add_argument("kind", choices=["naive", "logo", "lineage"])
    p.add_argument("--draws", required=True)
    p.add_argument("--msa")
    p.add_argument("--tip")
    p.add_argument("--cutoff", type=float, default=ValidationConfig.lineage_cutoff)
    p.add_argument("--dna", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="metrics over a simulated grid")
    p.add_argument("kind", choices=["naive", "asr"])
    p.add_argument("--sim-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--region")
    p.add_argument("--rho", help="comma-separated decision boundaries")
    p.add_argument("--amino", action="store_true", help="compare lineages as amino acids")
    p.add_argument("--baseline", choices=["fixed-naive", "none"], default="fixed-naive")
    mcmc_flags(p)

    p = sub.add_parser("oracle", help="brute-force checks on tiny random instances")
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--instances", type=int, default=5)

    p = sub.add_parser("make-demo-prior", help="write a synthetic naive prior")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--template-weight", type=float, default=0.94)
    p.add_argument("--junction")
    p.add_argument("--out", required=True)
    return parser


# ─────────────────────────────────────────────
#  Main
# ─────────────────────────────────────────────
def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv(os.getenv("PHYLOHMM_ENV_FILE", ".env"))
    try:
        args = build_parser().parse_args(argv)
    except PhyloHmmError as e:
        print(f"phylohmm: {e}", file=sys.stderr)
        return 2
    configure_logging(args.verbose, args.log_file)
    db.DB_PATH = os.getenv("PHYLOHMM_DB_PATH", db.DB_PATH)

    ledger = Ledger(os.getenv("PHYLOHMM_LEDGER", "1") != "0")
    ledger.start(args.command, args.seed, vars(args))
    logger.info(f"=== phylohmm {args.command} (seed={args.seed}, threads={args.threads}) ===")
    try:
        COMMANDS[args.command](args, ledger)
    except PhyloHmmError as e:
        logger.error(f"{type(e).__name__}: {e}")
        ledger.event("ERROR", str(e))
        ledger.finish("failed", str(e))
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        ledger.finish("failed", repr(e))
        return 1
    ledger.finish("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
