"""condensegan: penalized training, hinge pruning and distillation of U-net generators."""

__version__ = "1.0.0"

from .__main__ import main

__all__ = ["main", "__version__"]
