"""Architecture search for relation classification over a shared-parameter supernet."""

from .search_space import ArchitectureDescriptor, SearchSpace, baseline_preset, enumerate_dimensions, preset

__all__ = ["ArchitectureDescriptor", "SearchSpace", "baseline_preset", "enumerate_dimensions", "preset"]
__version__ = "0.1.0"
