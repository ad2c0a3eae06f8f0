from setuptools import setup, Extension
from Cython.Build import cythonize
import numpy

extensions = [
    Extension(
        "tdcss.kernels._cykernels",
        sources=["src/tdcss/kernels/_cykernels.pyx"],
    ),
]

setup(
    ext_modules=cythonize(extensions, language_level="3"),
    include_dirs=[numpy.get_include()],
)
