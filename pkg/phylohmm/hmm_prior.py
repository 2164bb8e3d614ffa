"""
Naive Prior
===========
Position-dependent Markov chain over the naive (root) sequence.

File format (JSON):

    {
      "length": 5,
      "initial": [0.25, 0.25, 0.25, 0.25],
      "transitions": [ [[...4 floats...], x4], ... ]          # n-1 matrices
    }

An entry of "transitions" may also be {"matrix": [[...]], "repeat": k}, which
expands to k copies of the same matrix. Probabilities are in linear space.
"""

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from errors import InvalidArgumentError, PriorFormatError
from substitution_model import BASE_INDEX, NUCLEOTIDES

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class NaivePrior:
    """initial[a] = p(Y1 = a); transitions[j, a, b] = p(Y(j+2) = b | Y(j+1) = a)."""

    initial: np.ndarray
    transitions: np.ndarray

    def __post_init__(self):
        initial = np.array(self.initial, dtype=float).reshape(-1)
        transitions = np.array(self.transitions, dtype=float)
        if transitions.size == 0:
            transitions = transitions.reshape(0, 4, 4)
        if initial.shape != (4,) or transitions.ndim != 3 or transitions.shape[1:] != (4, 4):
            raise PriorFormatError(f"bad prior shapes: initial {initial.shape}, transitions {transitions.shape}")
        if np.any(initial < 0) or np.any(transitions < 0) or not np.all(np.isfinite(transitions)):
            raise PriorFormatError("prior probabilities must be finite and non-negative")
        if abs(initial.sum() - 1.0) > 1e-9:
            raise PriorFormatError(f"initial distribution sums to {initial.sum()!r}")
        sums = transitions.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            j, a = np.argwhere(np.abs(sums - 1.0) > 1e-9)[0]
            raise PriorFormatError(f"transition row {NUCLEOTIDES[a]} at position {j + 2} sums to {sums[j, a]!r}")
        initial.setflags(write=False)
        transitions.setflags(write=False)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transitions", transitions)

    @property
    def n(self) -> int:
        return self.transitions.shape[0] + 1

    def log_initial(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.initial)

    def log_transitions(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.transitions)


def prior_from_dict(data: dict, expected_length: Optional[int] = None) -> NaivePrior:
    try:
        length = int(data["length"])
        initial = np.asarray(data["initial"], dtype=float)
        raw = data["transitions"]
    except (KeyError, TypeError, ValueError) as exc:
        raise PriorFormatError(f"prior is missing or has malformed field: {exc}") from None
    if length < 1:
        raise PriorFormatError(f"length must be >= 1, got {length}")
    if initial.shape != (4,):
        raise PriorFormatError(f"initial must have 4 entries, got shape {initial.shape}")

    matrices = []
    for k, entry in enumerate(raw):
        if isinstance(entry, dict):
            try:
                matrix = np.asarray(entry["matrix"], dtype=float)
                repeat = int(entry.get("repeat", 1))
            except (KeyError, TypeError, ValueError) as exc:
                raise PriorFormatError(f"transitions entry {k}: {exc}") from None
            if repeat < 0:
                raise PriorFormatError(f"transitions entry {k}: negative repeat {repeat}")
            matrices.extend([matrix] * repeat)
        else:
            matrices.append(np.asarray(entry, dtype=float))
    if len(matrices) != length - 1:
        raise PriorFormatError(f"length {length} needs {length - 1} transition matrices, got {len(matrices)}")
    if any(mat.shape != (4, 4) for mat in matrices):
        raise PriorFormatError("every transition matrix must be 4x4")
    transitions = np.array(matrices).reshape(length - 1, 4, 4)
    if np.any(initial < 0) or np.any(transitions < 0):
        raise PriorFormatError("prior probabilities must be non-negative")

    if abs(initial.sum() - 1.0) > ROW_TOLERANCE:
        raise PriorFormatError(f"initial distribution sums to {initial.sum():.6g}, expected 1")
    initial = initial / initial.sum()
    sums = transitions.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOLERANCE)
    if len(bad):
        j, a = bad[0]
        raise PriorFormatError(
            f"transition row {NUCLEOTIDES[a]} into position {j + 2} sums to {sums[j, a]:.6g}, expected 1")
    if length > 1:
        transitions = transitions / sums[:, :, None]

    if expected_length is not None and expected_length != length:
        raise PriorFormatError(f"prior length {length} does not match alignment width {expected_length}")
    return NaivePrior(initial=initial, transitions=transitions)


def load_prior(path, expected_length: Optional[int] = None) -> NaivePrior:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PriorFormatError(f"{path}: not valid JSON ({exc})") from None
    prior = prior_from_dict(data, expected_length)
    logger.info(f"Loaded naive prior from {path} (n={prior.n})")
    return prior


def prior_to_dict(prior: NaivePrior) -> dict:
    return {
        "length": prior.n,
        "initial": prior.initial.tolist(),
        "transitions": prior.transitions.tolist(),
    }


def write_prior(prior: NaivePrior, path) -> None:
    with open(path, "w") as fh:
        json.dump(prior_to_dict(prior), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _encode(sequence: str) -> np.ndarray:
    try:
        return np.array([BASE_INDEX[c] for c in sequence.upper()], dtype=int)
    except KeyError as exc:
        raise InvalidArgumentError(f"naive sequence has non-ACGT base {exc.args[0]!r}") from None


def prior_logprob(prior: NaivePrior, sequence: str) -> float:
    """log p(Y1) + sum_j log p(Y(j+1) | Y(j)); -inf when any factor is zero."""
    if len(sequence) != prior.n:
        raise InvalidArgumentError(f"sequence length {len(sequence)} != prior length {prior.n}")
    idx = _encode(sequence)
    with np.errstate(divide="ignore"):
        logp = np.log(prior.initial[idx[0]])
        if prior.n > 1:
            logp += np.log(prior.transitions[np.arange(prior.n - 1), idx[:-1], idx[1:]]).sum()
    return float(logp)


def sample_naive_prior(prior: NaivePrior, rng: np.random.Generator) -> str:
    state = rng.choice(4, p=prior.initial)
    out = [state]
    for matrix in prior.transitions:
        state = rng.choice(4, p=matrix[state])
        out.append(state)
    return "".join(NUCLEOTIDES[s] for s in out)


def uniform_iid_prior(pi: Sequence[float], n: int) -> NaivePrior:
    """Chain whose initial distribution and every transition row equal pi."""
    pi = np.asarray(pi, dtype=float)
    pi = pi / pi.sum()
    return NaivePrior(initial=pi, transitions=np.broadcast_to(pi, (n - 1, 4, 4)))


def demo_prior(n: int, seed: int = 0, template_weight: float = 0.94,
               junction: Optional[tuple] = None) -> NaivePrior:
    """
    Synthetic germline-anchored prior: a random template sequence that the
    chain follows with probability template_weight per position, and a
    junction window (default the middle tenth) where bases are uniform.
    """
    if n < 1:
        raise InvalidArgumentError(f"prior length must be >= 1, got {n}")
    if not 0.25 <= template_weight < 1.0:
        raise InvalidArgumentError(f"template_weight must be in [0.25, 1), got {template_weight}")
    rng = np.random.default_rng(seed)
    template = rng.integers(0, 4, size=n)
    if junction is None:
        mid, half = n // 2, max(1, n // 20)
        junction = (max(1, mid - half + 1), min(n, mid + half))
    lo, hi = junction

    def column(j: int) -> np.ndarray:
        if lo <= j + 1 <= hi:
            return np.full(4, 0.25)
        probs = np.full(4, (1.0 - template_weight) / 3.0)
        probs[template[j]] = template_weight
        return probs

    initial = column(0)
    transitions = np.array([np.tile(column(j), (4, 1)) for j in range(1, n)]).reshape(n - 1, 4, 4)
    return NaivePrior(initial=initial, transitions=transitions)
