import sys

if "--single-thread" in sys.argv:
    # must happen before numpy loads its BLAS
    import os

    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"

from .bench import main

sys.exit(main())
