"""Build script for the optional compiled kernel core.

The package is fully functional without the extension: icclab.kernels falls
back to the numpy reference implementations when `icclab._core` is missing.
"""

import os

from setuptools import setup

ext_modules = []
try:
    if not os.path.exists("src/icclab/_core.pyx"):
        raise ImportError("extension source not present")
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "icclab._core",
                ["src/icclab/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
