"""Build script: compiles the selective-scan extension when a toolchain is present.

The package works without the extension (a numpy fallback is selected at
import time), so compilation failures are non-fatal.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "mambaseg._kernels._scan_cy",
                ["src/mambaseg/_kernels/_scan_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
except Exception as exc:  # pragma: no cover - toolchain-dependent
    print(f"mambaseg: skipping compiled scan kernel ({exc}); "
          "the pure-numpy fallback will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
