"""Build script: compiles the optional Cython region-counting kernel.

The package works without the extension (a vectorized numpy fallback is
selected at import time), so a missing compiler or Cython only costs speed.
Build in place with: python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "facemim._kernels._region_counts",
                ["src/facemim/_kernels/_region_counts.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
