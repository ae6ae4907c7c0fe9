import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the pure-numpy
# implementations in donnseg._kernels._numpy_impl when the extension is absent.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "donnseg._kernels._cyops",
                ["src/donnseg/_kernels/_cyops.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
