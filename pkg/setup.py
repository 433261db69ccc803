import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# The compiled core is optional; spinctl.kernels falls back to pure numpy.
extensions = [
    Extension(
        "spinctl._ckernels",
        ["src/spinctl/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
