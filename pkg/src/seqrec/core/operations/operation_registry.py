"""
Operation Registry
Registry of sequence augmentation operators and the rules for picking among them
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List

logger = logging.getLogger(__name__)

RANDOM = "random"
INFORMATIVE = "informative"


@dataclass(frozen=True)
class OperationSpec:
    """One registered operator."""

    name: str
    description: str
    category: str
    ratio_field: str
    function: Callable


class OperationRegistry:
    """
    Registry of augmentation operators keyed by tag.

    Operators fall into two categories: ``random`` ones (crop, mask, reorder)
    that may destroy a short sequence, and ``informative`` ones (substitute,
    insert) that draw on item correlations and keep short sequences intact.
    """

    def __init__(self):
        self.operations: Dict[str, OperationSpec] = {}

    def register(self, name: str, category: str, ratio_field: str, description: str = ""):
        """Decorator adding an operator function under ``name``."""
        if category not in (RANDOM, INFORMATIVE):
            raise ValueError(f"Unknown operation category '{category}'")

        def decorator(function: Callable) -> Callable:
            if name in self.operations:
                raise ValueError(f"Operation '{name}' already registered")
            self.operations[name] = OperationSpec(name, description or (function.__doc__ or "").strip().split("\n")[0],
                                                  category, ratio_field, function)
            logger.debug(f"Registered augmentation operation '{name}' ({category})")
            return function

        return decorator

    def get_all_operations(self) -> List[str]:
        """All operation tags in registration order"""
        return list(self.operations.keys())

    def get_operation_config(self, operation_name: str) -> OperationSpec:
        if operation_name not in self.operations:
            raise ValueError(f"Operation '{operation_name}' not found in registry")
        return self.operations[operation_name]

    def get_operations_by_category(self, category: str) -> List[str]:
        return [name for name, spec in self.operations.items() if spec.category == category]

    def get_all_categories(self) -> List[str]:
        return sorted({spec.category for spec in self.operations.values()})

    def eligible_operations(self, length: int, short_sequence_threshold: int) -> List[str]:
        """Operators allowed for a sequence of ``length``: informative only when it is short."""
        if length <= short_sequence_threshold:
            return self.get_operations_by_category(INFORMATIVE)
        return self.get_all_operations()
