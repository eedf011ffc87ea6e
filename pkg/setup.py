"""Build script for the optional compiled message-update kernel.

The package is fully functional without the extension: ``swsbp._kernels``
falls back to a numpy implementation with identical semantics when the
compiled module is missing.
"""

import os

from setuptools import Extension, setup


def extension_modules():
    if not os.path.exists("src/swsbp/_kernels/_sbp.pyx"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "swsbp._kernels._sbp",
                ["src/swsbp/_kernels/_sbp.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=extension_modules())
