import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [Extension("bitdlab.kernels._ckernel", ["src/bitdlab/kernels/_ckernel.pyx"],
                        include_dirs=[np.get_include()],
                        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                        extra_compile_args=["-O3"], optional=True)]

setup(ext_modules=cythonize(extensions, language_level=3))
