"""Kernel dispatch for the sharing and reconstruction hot loops.

Two interchangeable backends:

* ``_ckernels`` - compiled extension using 64-bit inputs with 128-bit
  accumulators; fastest, but only exact when the input magnitudes fit.
* ``_pykernels`` - pure Python with arbitrary precision; always exact.

The compiled backend is selected at import when it built successfully,
and per call only after the magnitude preconditions below prove that no
intermediate can overflow.  Callers may force a backend by name, which
raises if the forced backend cannot accept the input.
"""

from __future__ import annotations

from . import _pykernels

try:
    import numpy as _np
except ImportError:  # pragma: no cover - numpy is a hard dependency
    _np = None

try:
    from . import _ckernels

    HAVE_C = _np is not None
except ImportError:
    _ckernels = None
    HAVE_C = False

BACKEND = "c" if HAVE_C else "python"

_I64 = 2**63 - 1
# Accumulator headroom: products of two 63-bit ints summed t times must
# stay inside a signed 128-bit accumulator.
_ACC_RECONSTRUCT = 2**125
_ACC_PROBE = 2**120


class BackendUnavailable(RuntimeError):
    pass


def _as_i64(rows, width=None):
    arr = _np.asarray(rows, dtype=_np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(0 if arr.size == 0 else len(rows), -1)
    return _np.ascontiguousarray(arr)


def _share_fits(digits, sigs, rows, p, t):
    if not HAVE_C:
        return False
    if p > 2**31:
        # share magnitude t*(p+1)*p must fit int64 with headroom
        if t * (p + 1) * p >= _I64:
            return False
    return True


def share_batch(digits, sigs, rows, p, backend=None):
    """Dispatch ``_pykernels.share_batch``; inputs as plain sequences or
    numpy arrays, output as a list of per-block share lists."""
    if backend not in (None, "c", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    nb = len(digits)
    if nb == 0:
        return []
    t = len(rows[0])
    want_c = backend == "c" or (backend is None and _share_fits(digits, sigs, rows, p, t))
    if backend == "c" and not HAVE_C:
        raise BackendUnavailable("compiled kernels are not importable")
    if want_c and HAVE_C:
        if backend == "c" and t * (p + 1) * p >= _I64:
            raise BackendUnavailable("share magnitudes exceed the compiled range")
        d = _as_i64(digits)
        s = _np.ascontiguousarray(_np.asarray(sigs, dtype=_np.int64))
        r = _as_i64(rows)
        out = _np.empty((nb, r.shape[0]), dtype=_np.int64)
        _ckernels.share_batch(d, s, r, out)
        return out.tolist()
    return _pykernels.share_batch(digits, sigs, rows, p)


def _max_abs(rows):
    best = 0
    for row in rows:
        for v in row:
            a = -v if v < 0 else v
            if a > best:
                best = a
    return best


def _reconstruct_fits(share_rows, adj, det, p, acc_bound):
    if not HAVE_C:
        return False
    if p >= _I64 or abs(det) >= _I64:
        return False
    max_adj = _max_abs(adj)
    if max_adj >= _I64:
        return False
    if isinstance(share_rows, _np.ndarray) and share_rows.dtype == _np.int64:
        max_share = int(_np.abs(share_rows).max()) if share_rows.size else 0
    else:
        max_share = _max_abs(share_rows)
    if max_share >= _I64:
        return False
    return len(adj) * max_adj * max_share < acc_bound


def reconstruct_batch(share_rows, adj, det, p, allow_pad, hash_name="digit-sum", backend=None):
    """Dispatch exact batch reconstruction.

    Returns ``(digits, sigs, status)`` as plain Python lists.  Custom inner
    hashes always take the Python path; the compiled kernel implements only
    the default digit-sum signature.
    """
    if backend not in (None, "c", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    nb = len(share_rows)
    if nb == 0:
        return [], [], []
    if backend == "c" and not HAVE_C:
        raise BackendUnavailable("compiled kernels are not importable")
    custom_hash = hash_name != "digit-sum"
    want_c = not custom_hash and (
        backend == "c" or (backend is None and _reconstruct_fits(share_rows, adj, det, p, _ACC_RECONSTRUCT))
    )
    if backend == "c":
        if custom_hash:
            raise BackendUnavailable("compiled kernels support only the digit-sum hash")
        if not _reconstruct_fits(share_rows, adj, det, p, _ACC_RECONSTRUCT):
            raise BackendUnavailable("share magnitudes exceed the compiled range")
    if want_c and HAVE_C:
        s = _as_i64(share_rows)
        a = _as_i64(adj)
        t = a.shape[0]
        digits = _np.zeros((nb, t - 1), dtype=_np.int64)
        sigs = _np.zeros(nb, dtype=_np.int64)
        status = _np.zeros(nb, dtype=_np.uint8)
        _ckernels.reconstruct_batch(s, a, det, p, allow_pad, digits, sigs, status)
        return digits.tolist(), sigs.tolist(), status.tolist()
    hash_fn = None
    if custom_hash:
        from ..sharing import get_inner_hash

        hash_fn = get_inner_hash(hash_name).fn
    return _pykernels.reconstruct_batch(share_rows, adj, det, p, allow_pad, hash_fn=hash_fn)


def probe_batch(share_rows, adj, det, p, backend=None):
    """Dispatch the signature-only acceptance probe used by benchmarks."""
    if backend not in (None, "c", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    nb = len(share_rows)
    if nb == 0:
        return []
    if backend == "c" and not HAVE_C:
        raise BackendUnavailable("compiled kernels are not importable")
    want_c = backend == "c" or (backend is None and _reconstruct_fits(share_rows, adj, det, p, _ACC_PROBE))
    if backend == "c" and not _reconstruct_fits(share_rows, adj, det, p, _ACC_PROBE):
        raise BackendUnavailable("share magnitudes exceed the compiled range")
    if want_c and HAVE_C:
        s = _as_i64(share_rows)
        a = _as_i64(adj)
        ok = _np.zeros(nb, dtype=_np.uint8)
        _ckernels.probe_batch(s, a, det, p, ok)
        return [bool(v) for v in ok]
    return _pykernels.probe_batch(share_rows, adj, det, p)
