"""Build hook for the optional compiled kernels.

Set DRIFTIO_NO_EXT=1 to skip compilation; the package then runs on the
pure-Python kernels.
"""
import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("DRIFTIO_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "driftio._kernels",
        ["src/driftio/_kernels.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
