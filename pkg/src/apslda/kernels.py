"""Pick the compiled kernel backend when importable, else the pure-Python one.

Set ``APSLDA_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pycore

python_backend = _pycore
compiled_backend = None

if os.environ.get("APSLDA_PURE_PYTHON") != "1":
    try:
        from . import _core as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if backend is compiled_backend else "python"

alias_build = backend.alias_build
alias_draw = backend.alias_draw
alias_draw_many = backend.alias_draw_many
resample_word = backend.resample_word
mh_chains = backend.mh_chains
foldin_doc = backend.foldin_doc
