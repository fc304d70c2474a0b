"""Build script.

The compiled kernel extension is optional: if Cython or a C compiler is
missing the package installs anyway and falls back to the pure-numpy
kernels at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "patchforge._native",
                ["src/patchforge/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - depends on build host
    print(f"patchforge: skipping compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
