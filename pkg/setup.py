import os

from setuptools import Extension, setup


def ext_modules():
    """Build the compiled kernel core when Cython is available.

    The package works without it (pure fallback selected at import), so a
    missing or failing toolchain must not break installation.
    """
    if os.environ.get("DUALMARKET_SKIP_BUILD"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "dualmarket._kernels._core",
        sources=["src/dualmarket/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        # -ffp-contract=off: no fused multiply-add, so the compiled kernels
        # perform exactly the same IEEE-754 operation sequence as the pure
        # fallback. No -ffast-math / -march=native for the same reason.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=ext_modules())
