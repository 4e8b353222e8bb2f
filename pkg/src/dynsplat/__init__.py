"""Dynamic Gaussian splatting with uncertainty-guided multi-view refinement."""
__version__ = "0.1.0"
