import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: install the pure-Python kernels only
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("FABREG_NO_EXT"):
    ext_modules = cythonize(
        [Extension("fabreg._core", ["src/fabreg/_core.pyx"], extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
