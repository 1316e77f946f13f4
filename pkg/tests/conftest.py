import os

# Keep BLAS single-threaded so runtime-bounded tests measure one CPU core.
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
