"""Build script for the optional compiled small-matrix kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile is tolerated rather than fatal.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "amorgp._smallmat_c",
                ["src/amorgp/_smallmat_c.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
