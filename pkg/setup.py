import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install; formctl falls back at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "formctl._ckernel",
                ["src/formctl/_ckernel.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
