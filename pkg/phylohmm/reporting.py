"""
Reporting
=========
Posterior summaries over a list of posterior draws:

- naive report: unique naive sequences with posterior probabilities (amino
  acid by default), the DNA -> amino-acid map and a per-site posterior matrix
- lineage report: naive -> tip paths aggregated into node and edge
  probabilities, written as a DOT graph and a FASTA
- ASR classification: PPV / TPR of the predicted ancestral lineage against a
  known true lineage

All floats in output files carry 6 significant digits.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from errors import DataMismatchError, FrameError, InvalidArgumentError, InvalidParameterError
from phylogeny import Msa, format_fasta

logger = logging.getLogger(__name__)

_BASES = "TCAG"
_AMINO = "FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG"
CODON_TABLE = {a + b + c: _AMINO[16 * i + 4 * j + k]
               for i, a in enumerate(_BASES) for j, b in enumerate(_BASES) for k, c in enumerate(_BASES)}
AMINO_ALPHABET = "ACDEFGHIKLMNPQRSTVWY*X"
DNA_ALPHABET = "ACGTN-"


def fmt(x: float) -> str:
    return f"{x:.6g}"


@dataclass(frozen=True)
class ValidationConfig:
    rho: float = 0.5
    region: Optional[Tuple[int, int]] = None
    lineage_tip: Optional[str] = None
    lineage_cutoff: float = 0.04

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise InvalidParameterError(f"rho must lie in (0, 1), got {self.rho}")
        if self.region is not None:
            start, end = self.region
            if not 1 <= start <= end:
                raise InvalidParameterError(f"region {self.region} is not a 1-based interval")
        if not 0.0 <= self.lineage_cutoff <= 1.0:
            raise InvalidParameterError(f"lineage cutoff must lie in [0, 1], got {self.lineage_cutoff}")

    def check_region(self, n: int) -> None:
        if self.region is not None and self.region[1] > n:
            raise InvalidParameterError(f"region {self.region} extends past column {n}")


# ─────────────────────────────────────────────
#  Sequence helpers
# ─────────────────────────────────────────────
def translate_dna(seq: str) -> str:
    """Standard genetic code from column 1; '*' for stop, 'X' for any codon with a non-ACGT base."""
    if len(seq) % 3:
        raise FrameError(f"sequence length {len(seq)} is not a multiple of 3")
    seq = seq.upper()
    return "".join(CODON_TABLE.get(seq[i:i + 3], "X") for i in range(0, len(seq), 3))


def hamming(a: str, b: str) -> int:
    if len(a) != len(b):
        raise InvalidArgumentError(f"hamming distance needs equal lengths, got {len(a)} and {len(b)}")
    return sum(x != y for x, y in zip(a, b))


def region_slice(seq: str, region: Optional[Tuple[int, int]], amino: bool = False) -> str:
    """Columns of a 1-based inclusive DNA region; on amino-acid strings, the codons it overlaps."""
    if region is None:
        return seq
    start, end = region
    if amino:
        return seq[(start - 1) // 3:(end + 2) // 3]
    return seq[start - 1:end]


def mutation_labels(a: str, b: str) -> List[str]:
    """'A12V'-style labels (1-based) for every differing site."""
    return [f"{x}{i}{y}" for i, (x, y) in enumerate(zip(a, b), start=1) if x != y]


def _ranked(counts: Counter, total: int) -> List[Tuple[str, float]]:
    return sorted(((s, c / total) for s, c in counts.items()), key=lambda item: (-item[1], item[0]))


def _naive_strings(draws) -> List[str]:
    return [d if isinstance(d, str) else d.naive for d in draws]


# ─────────────────────────────────────────────
#  Naive report
# ─────────────────────────────────────────────
@dataclass
class NaiveReport:
    records: List[Tuple[str, float]]
    dna_map: pd.DataFrame
    matrix: pd.DataFrame
    dna: bool = False

    def fasta(self) -> str:
        return format_fasta((f"naive_rank{r} posterior={fmt(p)}", s) for r, (s, p) in enumerate(self.records, 1))


def site_posterior_matrix(sequences: Sequence[str], alphabet: str) -> pd.DataFrame:
    """Rows are 1-based positions, columns the alphabet; entries are per-site frequencies."""
    length = len(sequences[0])
    index = {c: k for k, c in enumerate(alphabet)}
    counts = np.zeros((length, len(alphabet)))
    for seq in sequences:
        counts[np.arange(length), [index[c] for c in seq]] += 1
    frame = pd.DataFrame(counts / len(sequences), columns=list(alphabet))
    frame.index = pd.RangeIndex(1, length + 1, name="position")
    return frame


def naive_posterior_report(draws, dna: bool = False) -> NaiveReport:
    naives = _naive_strings(draws)
    if not naives:
        raise InvalidArgumentError("naive report needs at least one draw")
    shown = naives if dna else [translate_dna(s) for s in naives]
    total = len(shown)
    records = _ranked(Counter(shown), total)

    rows = []
    for dna_seq, p in _ranked(Counter(naives), total):
        rows.append({"amino_acid": translate_dna(dna_seq) if len(dna_seq) % 3 == 0 else "",
                     "dna": dna_seq, "posterior": p})
    dna_map = pd.DataFrame(rows, columns=["amino_acid", "dna", "posterior"])
    matrix = site_posterior_matrix(shown, DNA_ALPHABET[:4] if dna else AMINO_ALPHABET)
    return NaiveReport(records=records, dna_map=dna_map, matrix=matrix, dna=dna)


def write_naive_report(report: NaiveReport, prefix: str) -> List[str]:
    paths = [f"{prefix}.fasta", f"{prefix}.dna_map.tsv", f"{prefix}.matrix.tsv"]
    with open(paths[0], "w") as fh:
        fh.write(report.fasta())
    report.dna_map.to_csv(paths[1], sep="\t", index=False, float_format="%.6g")
    write_matrix(report.matrix, paths[2])
    return paths


def write_matrix(matrix: pd.DataFrame, path: str) -> None:
    matrix.to_csv(path, sep="\t", float_format="%.6g")


# ─────────────────────────────────────────────
#  Lineages
# ─────────────────────────────────────────────
@dataclass
class LineageSummary:
    paths: List[List[str]]
    node_probs: Dict[str, float]
    edge_probs: Dict[Tuple[str, str], float]
    naive_sequences: Set[str] = field(default_factory=set)

    def ranked_nodes(self) -> List[Tuple[str, float]]:
        return sorted(self.node_probs.items(), key=lambda item: (-item[1], item[0]))


def collapse_repeats(seqs: Iterable[str]) -> List[str]:
    out: List[str] = []
    for s in seqs:
        if not out or out[-1] != s:
            out.append(s)
    return out


def lineage_path(draw, msa: Msa, tip: str, dna: bool = False) -> List[str]:
    """Distinct consecutive sequences from the naive leaf to tip in one draw."""
    if tip not in draw.tree.tip_labels:
        raise DataMismatchError(f"lineage tip {tip!r} is not in the tree")
    seqs = [draw.node_sequence(u, msa) for u in draw.tree.path_from_naive(tip)]
    if not dna:
        seqs = [translate_dna(s) for s in seqs]
    return collapse_repeats(seqs)


def summarize_lineages(paths: Sequence[List[str]]) -> LineageSummary:
    total = len(paths)
    if not total:
        raise InvalidArgumentError("lineage summary needs at least one draw")
    nodes, edges = Counter(), Counter()
    for path in paths:
        nodes.update(set(path))
        edges.update(set(zip(path, path[1:])))
    return LineageSummary(paths=[list(p) for p in paths],
                          node_probs={s: c / total for s, c in nodes.items()},
                          edge_probs={e: c / total for e, c in edges.items()},
                          naive_sequences={p[0] for p in paths})


def lineage_dot(summary: LineageSummary, cutoff: float) -> str:
    """DOT digraph; nodes and edges with probability not above cutoff are left out."""
    ranks = {s: r for r, (s, _) in enumerate(summary.ranked_nodes(), start=1)}
    kept = {s for s, p in summary.node_probs.items() if p > cutoff}
    lines = ["digraph lineage {", "  node [shape=box, style=filled, fontname=\"Courier\"];"]
    for seq, p in summary.ranked_nodes():
        if seq not in kept:
            continue
        alpha = max(16, int(round(255 * p)))
        shape = ", shape=ellipse" if seq in summary.naive_sequences else ""
        lines.append(f"  n{ranks[seq]} [label=\"rank {ranks[seq]}\\nP={fmt(p)}\", "
                     f"fillcolor=\"#4682b4{alpha:02x}\"{shape}];")
    for (a, b), p in sorted(summary.edge_probs.items(), key=lambda item: (ranks[item[0][0]], ranks[item[0][1]])):
        if p <= cutoff or a not in kept or b not in kept:
            continue
        alpha = max(16, int(round(255 * p)))
        label = ",".join(mutation_labels(a, b))
        lines.append(f"  n{ranks[a]} -> n{ranks[b]} [label=\"{label}\", color=\"#000000{alpha:02x}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def lineage_fasta(summary: LineageSummary) -> str:
    return format_fasta((f"rank{r} posterior={fmt(p)}", s) for r, (s, p) in enumerate(summary.ranked_nodes(), 1))


def lineage_report(draws, msa: Msa, config: ValidationConfig, dna: bool = False) -> Tuple[LineageSummary, str]:
    if not config.lineage_tip:
        raise InvalidArgumentError("lineage report needs a lineage tip")
    summary = summarize_lineages([lineage_path(d, msa, config.lineage_tip, dna) for d in draws])
    return summary, lineage_dot(summary, config.lineage_cutoff)


# ─────────────────────────────────────────────
#  ASR classification
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class AsrResult:
    rho: float
    ppv: float
    tpr: float
    n_predicted: int
    n_truth: int
    n_correct: int

    @property
    def ppv_defined(self) -> bool:
        return self.n_predicted > 0


def intermediate_sequences(path: Sequence[str]) -> List[str]:
    """Collapsed lineage minus its naive start and tip end."""
    return list(path[1:-1])


def lineage_intermediate_posterior(draws, msa: Msa, tip: str, dna: bool = True) -> Dict[str, float]:
    """Fraction of draws whose lineage passes through each intermediate sequence."""
    counts = Counter()
    for d in draws:
        counts.update(set(intermediate_sequences(lineage_path(d, msa, tip, dna))))
    return {s: c / len(draws) for s, c in counts.items()}


def classify(predicted: Set[str], truth: Set[str], rho: float = math.nan) -> AsrResult:
    correct = len(predicted & truth)
    ppv = correct / len(predicted) if predicted else math.nan
    tpr = correct / len(truth) if truth else math.nan
    return AsrResult(rho=rho, ppv=ppv, tpr=tpr, n_predicted=len(predicted), n_truth=len(truth), n_correct=correct)


def asr_classification(posterior: Dict[str, float], truth: Iterable[str], config: ValidationConfig) -> AsrResult:
    """Prediction set = sequences with aggregated posterior >= rho."""
    predicted = {s for s, p in posterior.items() if p >= config.rho}
    result = classify(predicted, set(truth), config.rho)
    if not result.ppv_defined:
        logger.warning(f"Empty ancestral prediction set at rho={config.rho}; PPV undefined")
    return result
