"""
Proposal Base Class
===================
Abstract base class for every proposal engine, plus the PhyloSample record
the engines produce.

All engines must inherit from ProposalSource and implement:
- draw() method
- CONFIG dictionary
- get_name() method
- get_description() method
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional

from errors import InvalidParameterError
from phylogeny import CladeTree, Msa
from substitution_model import GtrParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PhyloSample:
    """One proposal draw (tree, GTR params, gamma shape) and its log q(D* | ...)."""

    tree: CladeTree
    params: GtrParams
    alpha: float
    proposal_loglik: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidParameterError(f"gamma shape must be positive, got {self.alpha!r}")
        if not math.isfinite(self.proposal_loglik):
            raise InvalidParameterError(f"proposal log-likelihood must be finite, got {self.proposal_loglik!r}")


class ProposalSource(ABC):
    """
    Abstract base class for proposal engines.

    Each engine must implement:
    - draw(): produce PhyloSamples for an augmented alignment
    - CONFIG: engine configuration parameters
    - get_name(): human-readable engine name
    - get_description(): engine description
    """

    # Default configuration - engines override
    CONFIG = {
        "n_pool":  4500,
        "k_rates": 4,
        "seed":    0,
    }

    def __init__(self):
        self.CONFIG = dict(type(self).CONFIG)

    @abstractmethod
    def get_name(self) -> str:
        """Return human-readable engine name."""

    @abstractmethod
    def get_description(self) -> str:
        """Return engine description."""

    @abstractmethod
    def draw(self, augmented_msa: Optional[Msa], naive_label: str) -> List[PhyloSample]:
        """
        Produce proposal samples for the augmented alignment D*.

        Args:
            augmented_msa: observed alignment plus the point-estimate naive row
            naive_label: identifier of the naive leaf in every tree

        Returns:
            list of PhyloSample, in draw order
        """

    def get_config(self) -> Dict:
        return self.CONFIG

    def update_config(self, new_config: Dict) -> None:
        self.CONFIG.update(new_config)
        logger.info(f"Updated config for {self.get_name()}: {new_config}")

    def validate_config(self) -> bool:
        for key in ProposalSource.CONFIG:
            if key not in self.CONFIG:
                logger.error(f"Missing required config key: {key}")
                return False
        return True
