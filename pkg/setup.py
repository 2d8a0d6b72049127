"""Build script for the compiled kernel extension.

Set STEREODEPTH_PURE=1 to skip the extension entirely; the package then
runs on the NumPy fallback kernels.
"""

import os

from setuptools import Extension, setup

if os.environ.get("STEREODEPTH_PURE") == "1":
    ext_modules = []
else:
    from Cython.Build import cythonize

    # reassociation flags let GCC vectorize the dot-product reductions;
    # accumulation order stays fixed per build, so runs remain bit-reproducible
    extensions = [
        Extension(
            "stereodepth._kernels._native",
            sources=["src/stereodepth/_kernels/_native.pyx"],
            extra_compile_args=["-O3", "-fopenmp", "-fassociative-math",
                                "-fno-signed-zeros", "-fno-trapping-math",
                                "-fno-math-errno"],
            extra_link_args=["-fopenmp"],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
