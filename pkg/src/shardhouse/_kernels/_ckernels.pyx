# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: 64-bit inputs, 128-bit accumulators.

The dispatcher only routes work here after proving that every
intermediate fits the accumulator width, so no overflow checks run in
the loops.  Semantics must match ``_pykernels`` exactly.
"""

cdef extern from *:
    ctypedef long long i128 "__int128"


def share_batch(const long long[:, ::1] digits, const long long[::1] sigs,
                const long long[:, ::1] rows, long long[:, ::1] out):
    cdef Py_ssize_t nb = digits.shape[0]
    cdef Py_ssize_t w = digits.shape[1]
    cdef Py_ssize_t nk = rows.shape[0]
    cdef Py_ssize_t b, k, h
    cdef i128 acc
    for b in range(nb):
        for k in range(nk):
            acc = 0
            for h in range(w):
                acc += (<i128> (digits[b, h] + 2)) * rows[k, h]
            acc += (<i128> sigs[b]) * rows[k, w]
            out[b, k] = <long long> acc
    return 0


def reconstruct_batch(const long long[:, ::1] shares, const long long[:, ::1] adj,
                      long long det, long long p, bint allow_pad,
                      long long[:, ::1] digits_out, long long[::1] sigs_out,
                      unsigned char[::1] status_out):
    cdef Py_ssize_t nb = shares.shape[0]
    cdef Py_ssize_t t = adj.shape[0]
    cdef Py_ssize_t w = t - 1
    cdef Py_ssize_t b, i, h
    cdef i128 acc, q, dsum, expected
    cdef i128 det128 = det
    cdef long long lo = -1 if allow_pad else 0
    cdef long long hi = p - 1
    cdef unsigned char st
    for b in range(nb):
        st = 0
        dsum = 0
        for i in range(t):
            acc = 0
            for h in range(t):
                acc += (<i128> adj[i, h]) * shares[b, h]
            if acc % det128 != 0:
                st = 1
                break
            q = acc / det128
            if i < w:
                q -= 2
                if q < lo or q > hi:
                    st = 2
                    break
                digits_out[b, i] = <long long> q
                dsum += q
            else:
                if q < 0 or q >= p:
                    st = 3
                else:
                    sigs_out[b] = <long long> q
        if st == 0 and allow_pad:
            for i in range(w - 1):
                if digits_out[b, i] == -1 and digits_out[b, i + 1] != -1:
                    st = 2
                    break
        if st == 0:
            expected = dsum % p
            if expected < 0:
                expected += p
            if sigs_out[b] != expected:
                st = 3
        status_out[b] = st
    return 0


def probe_batch(const long long[:, ::1] shares, const long long[:, ::1] adj,
                long long det, long long p, unsigned char[::1] ok_out):
    cdef Py_ssize_t nb = shares.shape[0]
    cdef Py_ssize_t t = adj.shape[0]
    cdef Py_ssize_t w = t - 1
    cdef Py_ssize_t b, i, h
    cdef i128 acc, q, dsum, sig, r
    cdef i128 det128 = det
    for b in range(nb):
        dsum = 0
        sig = 0
        for i in range(t):
            acc = 0
            for h in range(t):
                acc += (<i128> adj[i, h]) * shares[b, h]
            q = acc / det128
            if i < w:
                dsum += q - 2
            else:
                sig = q
        r = (sig - dsum) % (<i128> p)
        ok_out[b] = 1 if r == 0 else 0
    return 0
