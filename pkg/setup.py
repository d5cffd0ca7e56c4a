import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "setgen._kernels.matching_cy",
                ["src/setgen/_kernels/matching_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # pure-Python fallback is selected at import time
    ext_modules = []

setup(ext_modules=ext_modules)
