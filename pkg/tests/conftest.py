import os

# Single-threaded BLAS before numpy loads: reproducible and faster at
# these matrix sizes.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
