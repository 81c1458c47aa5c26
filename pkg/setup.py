"""Build script for the optional compiled kernels.

The package works without the extension; sharing and reconstruction fall
back to a pure Python implementation selected at import time.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "shardhouse._kernels._ckernels",
                sources=["src/shardhouse/_kernels/_ckernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
