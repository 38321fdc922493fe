"""Build the optional Cython kernel module.

The package is fully functional without it: ``dvge.kernels`` falls back to
the numpy implementations when ``dvge._kernels`` cannot be imported.
Set ``DVGE_NO_EXT=1`` to skip compiling entirely.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("DVGE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        extensions = [
            Extension(
                "dvge._kernels",
                ["src/dvge/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # contraction into FMA would break bitwise agreement with numpy
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
