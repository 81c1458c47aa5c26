"""Pure Python kernel backend.

Arbitrary-precision reference implementation of the hot loops.  The
compiled backend in ``_ckernels`` must match these results bit for bit on
every input it accepts; the dispatcher in ``__init__`` guarantees it is
only ever offered inputs whose intermediates fit its fixed-width types.
"""

from __future__ import annotations

OK = 0
NOT_DIVISIBLE = 1
OUT_OF_RANGE = 2
BAD_SIGNATURE = 3


def share_batch(digits, sigs, rows, p):
    """Share a batch of blocks for several providers.

    digits: B rows of t - 1 ints (padding -1 allowed)
    sigs:   B inner signatures
    rows:   K coefficient rows of t entries
    Returns B lists of K share integers.
    """
    w = len(rows[0]) - 1
    out = []
    for b, block in enumerate(digits):
        sig = sigs[b]
        shares = []
        for row in rows:
            acc = 0
            for h in range(w):
                acc += (block[h] + 2) * row[h]
            shares.append(acc + sig * row[w])
        out.append(shares)
    return out


def reconstruct_batch(share_rows, adj, det, p, allow_pad, hash_fn=None):
    """Invert a batch of t-share vectors exactly.

    Returns (digits, sigs, status) where status holds one code per block:
    0 ok, 1 not divisible by det, 2 digit out of domain, 3 bad signature.
    Digits and sigs of failed blocks are unspecified.
    """
    t = len(adj)
    w = t - 1
    lo = -1 if allow_pad else 0
    hi = p - 1
    digits_out = []
    sigs_out = []
    status = []
    for vec in share_rows:
        digits = [0] * w
        sig = 0
        st = OK
        for i in range(t):
            acc = 0
            arow = adj[i]
            for h in range(t):
                acc += arow[h] * vec[h]
            if acc % det:
                st = NOT_DIVISIBLE
                break
            q = acc // det
            if i < w:
                q -= 2
                if q < lo or q > hi:
                    st = OUT_OF_RANGE
                    break
                digits[i] = q
            else:
                sig = q
        if st == OK and allow_pad:
            for i in range(w - 1):
                if digits[i] == -1 and digits[i + 1] != -1:
                    st = OUT_OF_RANGE
                    break
        if st == OK:
            if hash_fn is None:
                expected = sum(digits) % p
            else:
                expected = hash_fn(tuple(digits), p)
            if sig != expected:
                st = BAD_SIGNATURE
        digits_out.append(digits)
        sigs_out.append(sig)
        status.append(st)
    return digits_out, sigs_out, status


def _trunc_div(a, b):
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def probe_batch(share_rows, adj, det, p):
    """Signature-only acceptance probe with truncating division.

    Mirrors a reconstruction that never checks divisibility or digit
    domains: quotients are truncated and only the congruence between the
    signature slot and the digit sum is tested.  Used by the benchmark to
    measure how often the inner signature alone misses a corrupted share.
    """
    t = len(adj)
    w = t - 1
    out = []
    for vec in share_rows:
        dsum = 0
        sig = 0
        for i in range(t):
            acc = 0
            arow = adj[i]
            for h in range(t):
                acc += arow[h] * vec[h]
            q = _trunc_div(acc, det)
            if i < w:
                dsum += q - 2
            else:
                sig = q
        out.append((sig - dsum) % p == 0)
    return out
