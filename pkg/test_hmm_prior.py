import itertools
import json
import math

import numpy as np
import pytest

from errors import InvalidArgumentError, PriorFormatError
from hmm_prior import (NaivePrior, demo_prior, load_prior, prior_from_dict, prior_logprob, prior_to_dict,
                       sample_naive_prior, uniform_iid_prior, write_prior)

UNIFORM_ROW = [0.25, 0.25, 0.25, 0.25]


def deterministic_prior():
    return prior_from_dict({"length": 2, "initial": [1, 0, 0, 0],
                            "transitions": [[[0, 1, 0, 0]] + [UNIFORM_ROW] * 3]})


def random_prior(rng, n):
    return NaivePrior(initial=rng.dirichlet(np.ones(4)), transitions=rng.dirichlet(np.ones(4), size=(n - 1, 4)))


def test_load_uniform_prior(tmp_path):
    path = tmp_path / "prior.json"
    path.write_text(json.dumps({"length": 5, "initial": UNIFORM_ROW,
                                "transitions": [{"matrix": [UNIFORM_ROW] * 4, "repeat": 4}]}))
    prior = load_prior(path, expected_length=5)
    assert prior.n == 5
    np.testing.assert_allclose(prior.transitions, 0.25)


def test_row_sum_violation_names_position():
    bad = [[0.3, 0.3, 0.2, 0.1]] + [UNIFORM_ROW] * 3
    with pytest.raises(PriorFormatError, match="position 3"):
        prior_from_dict({"length": 3, "initial": UNIFORM_ROW, "transitions": [[UNIFORM_ROW] * 4, bad]})


def test_length_mismatch():
    with pytest.raises(PriorFormatError):
        prior_from_dict({"length": 2, "initial": UNIFORM_ROW, "transitions": [[UNIFORM_ROW] * 4]},
                        expected_length=3)
    with pytest.raises(PriorFormatError):
        prior_from_dict({"length": 3, "initial": UNIFORM_ROW, "transitions": [[UNIFORM_ROW] * 4]})


def test_malformed_file(tmp_path):
    path = tmp_path / "prior.json"
    path.write_text("{not json")
    with pytest.raises(PriorFormatError):
        load_prior(path)
    with pytest.raises(PriorFormatError):
        prior_from_dict({"initial": UNIFORM_ROW})


def test_write_and_reload(tmp_path):
    prior = random_prior(np.random.default_rng(1), 4)
    write_prior(prior, tmp_path / "p.json")
    back = load_prior(tmp_path / "p.json")
    np.testing.assert_allclose(back.initial, prior.initial, rtol=1e-12)
    np.testing.assert_allclose(back.transitions, prior.transitions, rtol=1e-12)
    assert prior_to_dict(back)["length"] == 4


def test_deterministic_chain_logprob():
    prior = deterministic_prior()
    assert prior_logprob(prior, "AC") == 0.0
    assert prior_logprob(prior, "AA") == -math.inf


def test_uniform_logprob():
    prior = uniform_iid_prior(UNIFORM_ROW, 7)
    assert prior_logprob(prior, "ACGTTGA") == pytest.approx(7 * math.log(0.25))


def test_logprob_rejects_ambiguous_base():
    with pytest.raises(InvalidArgumentError):
        prior_logprob(uniform_iid_prior(UNIFORM_ROW, 3), "ANA")


def test_normalisation_over_all_sequences():
    rng = np.random.default_rng(2)
    for n in (1, 3, 6):
        prior = random_prior(rng, n) if n > 1 else NaivePrior(rng.dirichlet(np.ones(4)), np.zeros((0, 4, 4)))
        total = sum(math.exp(prior_logprob(prior, "".join(s))) for s in itertools.product("ACGT", repeat=n))
        assert total == pytest.approx(1.0, abs=1e-9)


def test_sampler_deterministic_chain():
    rng = np.random.default_rng(3)
    assert {sample_naive_prior(deterministic_prior(), rng) for _ in range(50)} == {"AC"}


def test_sampler_uniform_frequencies():
    rng = np.random.default_rng(4)
    draws = np.array([list(sample_naive_prior(uniform_iid_prior(UNIFORM_ROW, 3), rng)) for _ in range(20000)])
    sigma = math.sqrt(0.25 * 0.75 / len(draws))
    for j in range(3):
        for base in "ACGT":
            assert abs((draws[:, j] == base).mean() - 0.25) < 4 * sigma


def test_sampler_matches_density():
    rng = np.random.default_rng(5)
    prior = random_prior(rng, 3)
    draws = [sample_naive_prior(prior, rng) for _ in range(40000)]
    counts = {s: draws.count(s) for s in set(draws)}
    for seq in ("".join(s) for s in itertools.product("ACGT", repeat=3)):
        p = math.exp(prior_logprob(prior, seq))
        se = math.sqrt(p * (1 - p) / len(draws))
        assert abs(counts.get(seq, 0) / len(draws) - p) < 4 * se + 1e-9


def test_sampler_seed_reproducible():
    prior = random_prior(np.random.default_rng(6), 10)
    a = sample_naive_prior(prior, np.random.default_rng(42))
    b = sample_naive_prior(prior, np.random.default_rng(42))
    assert a == b


def test_demo_prior_shape():
    prior = demo_prior(60, seed=1)
    assert prior.n == 60
    # junction window (middle tenth) is uniform, template positions are not
    np.testing.assert_allclose(prior.transitions[29], 0.25)
    assert prior.transitions[0].max() == pytest.approx(0.94)
