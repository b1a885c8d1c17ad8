"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-NumPy fallback is selected
at import time); building it just makes the hot sampling kernels faster.
A failed compile therefore degrades to a source-only install instead of
aborting.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "jointebm._speedups",
                ["src/jointebm/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
