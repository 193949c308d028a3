import os

# keep BLAS single-threaded: matrices here are small and bit-reproducibility
# across runs matters more than parallel GEMM
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
