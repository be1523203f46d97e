"""RNS-based analog GEMM simulation with redundant-residue fault tolerance."""

__version__ = "0.1.0"
