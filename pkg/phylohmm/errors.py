"""
Errors
======
Exception hierarchy shared by every stage of the pipeline.

Library code raises these; the CLI in main.py catches PhyloHmmError, logs it
and records it in the run ledger.
"""


class PhyloHmmError(Exception):
    """Base class for all pipeline errors."""


class InvalidParameterError(PhyloHmmError, ValueError):
    """A model parameter is outside its support (non-positive rate, bad simplex...)."""


class InvalidArgumentError(PhyloHmmError, ValueError):
    """An argument to an operation is malformed (negative branch length, bad base...)."""


class DataMismatchError(PhyloHmmError):
    """Tree tips, alignment rows or prior length do not line up."""


class ImpossibleDataError(PhyloHmmError):
    """Every hidden configuration has probability zero under the model."""


class NewickParseError(PhyloHmmError):
    """Malformed Newick text. Carries the 1-based line and column of the problem."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line else ""
        super().__init__(f"{message}{where}")


class PriorFormatError(PhyloHmmError):
    """Naive prior file is malformed or violates the chain invariants."""


class TraceFormatError(PhyloHmmError):
    """External proposal trace is malformed."""


class InitializationError(PhyloHmmError):
    """The MCMC chain could not start from a state with finite density."""


class InsufficientPoolError(PhyloHmmError):
    """Fewer finite-weight pool samples than requested posterior draws."""


class FrameError(PhyloHmmError, ValueError):
    """DNA length is not a multiple of three."""


class SimulationError(PhyloHmmError):
    """Simulation could not produce a valid replicate."""
