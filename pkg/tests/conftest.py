import os

# Pin BLAS to one thread before numpy loads anywhere: keeps the acceptance
# timings honest on a single core and run-to-run reductions identical.
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
