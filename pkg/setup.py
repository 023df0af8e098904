"""Build the optional compiled kernels; the package runs without them."""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("TACO_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tacorl._kernels",
                ["src/tacorl/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: results must match the Python fallback bitwise
                extra_compile_args=["-O2", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
