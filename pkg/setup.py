import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # No Cython: install without the compiled kernels, the pure-Python
    # engine is selected automatically at import.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "renforge._kernels",
                ["src/renforge/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
