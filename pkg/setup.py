import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # without Cython the package installs pure-Python and uses the numpy fallback
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "attnkern._kernels",
                ["src/attnkern/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
