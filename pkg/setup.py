import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# -ffp-contract=off keeps the C kernels bit-identical to the NumPy fallback:
# fused multiply-adds would round cross products and distances differently.
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "handvid.kernels._native",
                ["src/handvid/kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
