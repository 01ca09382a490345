"""Build the optional Cython kernel; the package falls back to pure Python without it."""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("APSLDA_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "apslda._core",
                    ["src/apslda/_core.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math / FMA contraction: results must match _pycore bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
