"""Build script: compiles the optional Cython kernel core.

The compiled extension is a performance backend only; if the build fails
(no compiler, no Cython) the package installs anyway and falls back to the
numpy kernels at import time.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Never fail the install because the extension would not compile."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            print(f"warning: building the compiled kernel core failed ({exc}); "
                  "probsdf will use the pure-Python kernels", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: {ext.name} failed to compile ({exc}); "
                  "probsdf will use the pure-Python kernels", file=sys.stderr)


def extensions():
    import os
    if not os.path.exists("src/probsdf/_kernels/_core.pyx"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("warning: Cython not available; skipping compiled kernels",
              file=sys.stderr)
        return []
    from setuptools import Extension

    ext = Extension(
        "probsdf._kernels._core",
        sources=["src/probsdf/_kernels/_core.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        language_level=3,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
