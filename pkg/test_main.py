import os

import pandas as pd
import pytest

import db
from ancestral_sampler import read_archive
from errors import InvalidArgumentError
from hmm_prior import load_prior
from main import build_parser, main, parse_region

SMALL_CHAIN = ["--iterations", "60", "--thin", "2", "--burnin", "5"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("PHYLOHMM_DB_PATH", str(tmp_path / "ledger.db"))
    monkeypatch.setenv("PHYLOHMM_ENV_FILE", str(tmp_path / "missing.env"))
    for name in ("PHYLOHMM_PRIOR", "PHYLOHMM_SEED", "PHYLOHMM_N_POOL", "PHYLOHMM_N_FINAL", "PHYLOHMM_LEDGER"):
        monkeypatch.delenv(name, raising=False)
    return tmp_path


def run(*argv, pool=("--n-pool", "25", "--n-final", "5")):
    return main(["--log-file", "logs/phylohmm.log", "--k-rates", "2", *pool, *argv])


@pytest.fixture
def simulated(workdir):
    assert run("--seed", "3", "simulate", "--out", "sim", "--n-cf", "4", "--length", "12") == 0
    manifest = pd.read_csv(workdir / "sim" / "manifest.tsv", sep="\t")
    return workdir / "sim", workdir / "sim" / manifest["directory"].iloc[0]


def test_parse_region():
    assert parse_region("4-9") == (4, 9)
    assert parse_region("4:9") == (4, 9)
    assert parse_region(None) is None
    with pytest.raises(InvalidArgumentError):
        parse_region("four-nine")


def test_parser_defaults(workdir):
    args = build_parser().parse_args(["oracle"])
    assert args.n_pool == 4500
    assert args.n_final is None
    assert args.naive_id == "naive"


def test_make_demo_prior(workdir):
    assert run("make-demo-prior", "--length", "30", "--out", "demo.json") == 0
    assert load_prior(workdir / "demo.json").n == 30


def test_simulate_writes_prior_and_manifest(simulated):
    sim_dir, rep_dir = simulated
    assert load_prior(sim_dir / "prior.json").n == 12
    for name in ("tree.nwk", "msa.fasta", "naive.fasta", "internal_truth.tsv", "meta.json"):
        assert (rep_dir / name).exists()


def test_sample_report_and_determinism(simulated, workdir):
    sim_dir, rep_dir = simulated
    common = ["--prior", str(sim_dir / "prior.json")]
    for out in ("first", "second"):
        assert run(*common, "sample", "--msa", str(rep_dir / "msa.fasta"), "--out", out, *SMALL_CHAIN) == 0
    first = (workdir / "first.draws.jsonl").read_bytes()
    assert first == (workdir / "second.draws.jsonl").read_bytes()
    assert len(read_archive(workdir / "first.draws.jsonl")) == 5
    for suffix in (".pool.nwk", ".pool.tsv", ".naive.fasta", ".naive.matrix.tsv", ".naive.dna_map.tsv"):
        assert (workdir / f"first{suffix}").exists()

    assert run("report", "naive", "--draws", "first.draws.jsonl", "--dna", "--out", "rep") == 0
    assert (workdir / "rep.fasta").read_text().startswith(">naive_rank1")
    assert run("report", "logo", "--draws", "first.draws.jsonl", "--out", "logo.tsv") == 0
    assert pd.read_csv(workdir / "logo.tsv", sep="\t").shape[0] == 4
    assert run("report", "lineage", "--draws", "first.draws.jsonl", "--msa", str(rep_dir / "msa.fasta"),
               "--tip", "seq1", "--dna", "--out", "lin") == 0
    assert (workdir / "lin.dot").read_text().startswith("digraph lineage {")
    assert (workdir / "lin.fasta").read_text().startswith(">rank1")


def test_propose_then_sample_from_trace(simulated, workdir):
    sim_dir, rep_dir = simulated
    common = ["--prior", str(sim_dir / "prior.json")]
    assert run(*common, "propose", "--msa", str(rep_dir / "msa.fasta"), "--out-trees", "t.nwk",
               "--out-params", "t.tsv", *SMALL_CHAIN) == 0
    assert len((workdir / "t.nwk").read_text().splitlines()) == 25
    assert run("ingest-trace", "--trees", "t.nwk", "--params", "t.tsv", "--out-trees", "c.nwk",
               "--out-params", "c.tsv") == 0
    assert run(*common, "sample", "--msa", str(rep_dir / "msa.fasta"), "--trees", "c.nwk", "--params", "c.tsv",
               "--out", "traced") == 0
    assert len(read_archive(workdir / "traced.draws.jsonl")) == 5


def test_validate_naive(simulated, workdir):
    sim_dir, _ = simulated
    assert run("validate", "naive", "--sim-dir", str(sim_dir), "--out", "val.tsv", *SMALL_CHAIN) == 0
    table = pd.read_csv(workdir / "val.tsv", sep="\t")
    assert {"phylohmm", "star"} <= set(table["method"])
    assert (workdir / "val.summary.tsv").exists()


def test_ledger_keeps_sir_and_validation_rows(simulated, workdir):
    sim_dir, rep_dir = simulated
    assert run("--prior", str(sim_dir / "prior.json"), "sample", "--msa", str(rep_dir / "msa.fasta"), "--out", "s",
               *SMALL_CHAIN) == 0
    sample_run = db.get_runs()[0]
    assert sample_run["command"] == "sample"
    diagnostics = db.get_sir_diagnostics(sample_run["id"])
    assert len(diagnostics) == 1
    assert (diagnostics[0]["n_pool"], diagnostics[0]["n_final"]) == (25, 5)
    assert 1.0 <= diagnostics[0]["ess"] <= 25.0 + 1e-9

    assert run("validate", "naive", "--sim-dir", str(sim_dir), "--out", "v.tsv", *SMALL_CHAIN) == 0
    validate_run = db.get_runs()[0]
    rows = db.get_validation(validate_run["id"])
    table = pd.read_csv(workdir / "v.tsv", sep="\t")
    assert len(rows) == len(table)
    assert {r["method"] for r in rows} == set(table["method"])
    assert db.get_sir_diagnostics(validate_run["id"]) == []


def test_oracle_output(workdir, capsys):
    assert run("oracle", "--m", "2", "--n", "2", "--instances", "3") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4
    for line in lines[1:]:
        _, fast, brute, seq, brute_seq, site, brute_site = line.split("\t")
        assert float(fast) == pytest.approx(float(brute), rel=1e-9)
        assert seq == brute_seq
        assert float(site) == pytest.approx(float(brute_site), rel=1e-9)


def test_domain_error_exit_code(simulated, workdir):
    _, rep_dir = simulated
    # no prior anywhere
    assert run("sample", "--msa", str(rep_dir / "msa.fasta"), "--out", "x", *SMALL_CHAIN) == 2
    assert run("--prior", "nowhere.json", "sample", "--msa", str(rep_dir / "msa.fasta"), "--out", "x") != 0


def test_ledger_records_runs(workdir):
    assert run("make-demo-prior", "--length", "9", "--out", "p.json") == 0
    assert run("make-demo-prior", "--length", "9", "--junction", "bad", "--out", "p.json") == 2
    runs = db.get_runs()
    assert [r["status"] for r in runs] == ["failed", "ok"]
    assert runs[1]["command"] == "make-demo-prior"
    assert any("demo prior" in e["message"] for e in db.get_events(runs[1]["id"]))


def test_ledger_can_be_disabled(workdir, monkeypatch):
    monkeypatch.setenv("PHYLOHMM_LEDGER", "0")
    assert run("make-demo-prior", "--length", "9", "--out", "p.json") == 0
    assert not os.path.exists(workdir / "ledger.db")
