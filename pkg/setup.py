"""Build the optional compiled kernels.

If Cython or a C compiler is unavailable the package still installs and
``ultrkit.kernels`` falls back to the pure-Python implementations.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("ULTRKIT_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ultrkit._ckernels",
                    ["src/ultrkit/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"ultrkit: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
