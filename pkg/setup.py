"""Builds the optional compiled kernel extension.

The package works without it: taeparse.kernels falls back to the pure
numpy implementations when the extension is absent (see that module).
A failed compile therefore downgrades to a warning instead of aborting
the install.
"""

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            print(f"WARNING: compiled kernels not built ({exc}); "
                  "falling back to pure numpy kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: could not build {ext.name} ({exc}); "
                  "falling back to pure numpy kernels")


extensions = [
    Extension(
        "taeparse.kernels._ckernels",
        ["src/taeparse/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

try:
    from Cython.Build import cythonize
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
except ImportError:
    print("WARNING: Cython not available; compiled kernels will not be built")
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
