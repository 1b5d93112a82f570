"""Build script for the optional compiled accounting kernel.

The package works without the extension (a NumPy fallback is selected at
import time); the Cython module just makes the hot per-step RDP kernel
faster. If the toolchain is missing, we still install the pure-Python
package instead of failing the build.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "idpacct._kernel_cy",
                ["src/idpacct/_kernel_cy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
