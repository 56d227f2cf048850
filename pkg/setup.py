from setuptools import setup, Extension

import numpy

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "seqseg.geometry._kernels",
                ["src/seqseg/geometry/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

# The compiled kernels are optional: without Cython the package installs
# with the pure-numpy backend only.
setup(ext_modules=ext_modules)
