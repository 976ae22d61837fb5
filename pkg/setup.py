"""Build script: compiles the optional Cython stream kernel.

The package works without the extension (a pure-Python fallback is selected
at import time), so any build failure here downgrades to a warning instead
of aborting the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/sipstream/_speedups.pyx",
        compiler_directives={"language_level": "3"},
    )
    # -ffp-contract=off keeps the compiled kernel bit-identical to the
    # pure-Python fallback (no FMA contraction).
    for ext in ext_modules:
        ext.extra_compile_args = ["-O2", "-ffp-contract=off"]
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"sipstream: skipping Cython extension ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
