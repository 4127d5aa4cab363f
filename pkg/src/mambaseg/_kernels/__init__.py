"""Scan kernel backend selection.

Prefers the compiled extension; falls back to pure numpy when it is absent.
Set MAMBASEG_SCAN_BACKEND=numpy (or =cython) to force a backend — forcing
cython raises if the extension was never built.
"""

import os

from . import scan_numpy

_forced = os.environ.get("MAMBASEG_SCAN_BACKEND", "").strip().lower()

if _forced == "numpy":
    BACKEND = "numpy"
    scan_forward = scan_numpy.scan_forward
    scan_backward = scan_numpy.scan_backward
else:
    try:
        from . import _scan_cy

        BACKEND = "cython"
        scan_forward = _scan_cy.scan_forward
        scan_backward = _scan_cy.scan_backward
    except ImportError:
        if _forced == "cython":
            raise
        BACKEND = "numpy"
        scan_forward = scan_numpy.scan_forward
        scan_backward = scan_numpy.scan_backward
