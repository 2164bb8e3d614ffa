"""
Proposal Manager
================
Discovers proposal engines in proposals/, activates one by name and forwards
draws to it.
"""

import importlib.util
import logging
import os
import sys
from typing import Dict, List, Optional, Type

from errors import InvalidArgumentError
from phylogeny import Msa
from proposal_base import PhyloSample, ProposalSource

logger = logging.getLogger(__name__)


class ProposalManager:
    """
    Registry of proposal engines with dynamic loading.
    """

    def __init__(self, proposals_dir: str = "proposals"):
        self.proposals_dir = proposals_dir
        self.engines: Dict[str, Type[ProposalSource]] = {}
        self.active_engine: Optional[ProposalSource] = None
        self.active_engine_name: Optional[str] = None
        self._load_engines()

    def _load_engines(self) -> None:
        """Import every .py file in proposals/ and register ProposalSource subclasses."""
        path = os.path.join(os.path.dirname(os.path.abspath(__file__)), self.proposals_dir)
        if not os.path.isdir(path):
            logger.warning(f"Proposals directory not found: {path}")
            return

        for filename in sorted(os.listdir(path)):
            if not filename.endswith(".py") or filename.startswith("__"):
                continue
            module_name = f"proposals.{filename[:-3]}"
            module = sys.modules.get(module_name)
            try:
                if module is None:
                    module = self._import(module_name, os.path.join(path, filename))
            except Exception as e:
                logger.error(f"Failed to load proposal module {module_name}: {e}")
                continue
            if module is None:
                continue

            for attr_name in dir(module):
                attr = getattr(module, attr_name)
                if (isinstance(attr, type) and issubclass(attr, ProposalSource)
                        and attr is not ProposalSource and attr.__module__ == module_name):
                    name = attr().get_name().lower().replace(" ", "_")
                    self.engines[name] = attr
                    logger.debug(f"Loaded proposal engine: {name} ({attr.__name__})")

        logger.info(f"Loaded {len(self.engines)} proposal engines: {sorted(self.engines)}")

    @staticmethod
    def _import(module_name: str, file_path: str):
        spec = importlib.util.spec_from_file_location(module_name, file_path)
        if spec is None or spec.loader is None:
            return None
        module = importlib.util.module_from_spec(spec)
        sys.modules[module_name] = module
        spec.loader.exec_module(module)
        return module

    def get_available_engines(self) -> List[Dict]:
        info = []
        for name, engine_class in sorted(self.engines.items()):
            instance = engine_class()
            info.append({
                "name": name,
                "display_name": instance.get_name(),
                "description": instance.get_description(),
                "config": instance.get_config(),
            })
        return info

    def set_active_engine(self, name: str, config: Optional[Dict] = None) -> ProposalSource:
        if name not in self.engines:
            raise InvalidArgumentError(f"unknown proposal engine {name!r}; available: {sorted(self.engines)}")
        engine = self.engines[name]()
        if config:
            engine.update_config(config)
        if not engine.validate_config():
            raise InvalidArgumentError(f"invalid configuration for proposal engine {name!r}")
        self.active_engine = engine
        self.active_engine_name = name
        logger.info(f"Activated proposal engine: {name} ({engine.get_name()})")
        return engine

    def get_active_engine(self) -> Optional[ProposalSource]:
        return self.active_engine

    def draw(self, augmented_msa: Optional[Msa], naive_label: str) -> List[PhyloSample]:
        if self.active_engine is None:
            raise InvalidArgumentError("no active proposal engine")
        samples = self.active_engine.draw(augmented_msa, naive_label)
        logger.info(f"{self.active_engine.get_name()} produced {len(samples)} proposal samples")
        return samples
