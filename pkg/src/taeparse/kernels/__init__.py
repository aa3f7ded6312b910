"""Hot-kernel dispatch: compiled extension when built, numpy otherwise.

The backend is chosen once at import. Results are deterministic within a
backend; across backends they agree to float tolerance (see
tests/test_kernels.py and benchmarks/bench_kernels.py).
"""

from . import pure as _pure

try:
    from . import _ckernels as _impl
except ImportError:
    _impl = _pure

BACKEND = _impl.NAME

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
norm_fwd = _impl.norm_fwd
norm_bwd = _impl.norm_bwd
copy_mix_fwd = _impl.copy_mix_fwd
copy_mix_bwd = _impl.copy_mix_bwd
scatter_add_rows = _impl.scatter_add_rows
adam_step = _impl.adam_step


def available_backends():
    """Names of importable backends ("pure" always; "compiled" if built)."""
    names = [_pure.NAME]
    if _impl is not _pure:
        names.append(_impl.NAME)
    return names


def load_backend(name):
    """Module implementing the kernel set for `name` (for tests/benchmarks)."""
    if name == "pure":
        return _pure
    if name == "compiled":
        if _impl is _pure:
            raise ImportError("compiled kernels are not built")
        return _impl
    raise ValueError(f"unknown kernel backend: {name!r}")
