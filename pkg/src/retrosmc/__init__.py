"""Surrogate-assisted sequential Monte Carlo over reactant catalogs."""

import os

# one BLAS thread per process: the matmuls here are small and the bench
# harness runs one worker per core
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
