"""Compiled and pure Python kernels must agree bit for bit."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from shardhouse import _kernels
from shardhouse._kernels import BackendUnavailable, probe_batch, reconstruct_batch, share_batch
from shardhouse.sharing import SharingConfig, build_reconstruction, gen_coefficients

pytestmark = pytest.mark.skipif(
    not _kernels.HAVE_C, reason="compiled backend did not build"
)


def _setup(p, n, t, seed):
    cfg = SharingConfig(n=n, t=t, p=p, seed=seed)
    coeffs = gen_coefficients(cfg)
    ctx = build_reconstruction(cfg.csp_ids[:t], coeffs, cfg)
    rows = [coeffs.row_for(k) for k in cfg.csp_ids]
    return cfg, coeffs, ctx, rows


def _blocks(cfg, count, rng):
    digits = [
        tuple(rng.randrange(cfg.p) for _ in range(cfg.block_width))
        for _ in range(count)
    ]
    sigs = [sum(d) % cfg.p for d in digits]
    return digits, sigs


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([13, 251, 99991]),
    st.integers(2, 5),
    st.integers(0, 10**6),
)
def test_backends_agree(p, t, seed):
    cfg, coeffs, ctx, rows = _setup(p, t + 1, t, seed)
    rng = random.Random(seed)
    digits, sigs = _blocks(cfg, 40, rng)
    via_c = share_batch(digits, sigs, rows, p, backend="c")
    via_py = share_batch(digits, sigs, rows, p, backend="python")
    assert via_c == via_py

    vecs = [row[:t] for row in via_c]
    # Corrupt a third of the vectors so the status path is exercised too.
    for i in range(0, len(vecs), 3):
        vecs[i] = list(vecs[i])
        vecs[i][rng.randrange(t)] += rng.choice([-2, -1, 1, 2, p])
    rp = reconstruct_batch(vecs, ctx.adj, ctx.det, p, False, backend="python")

    def assert_equivalent(a, b):
        # Digits and sigs of failed blocks are unspecified; compare only
        # the status vector there.
        assert a[2] == b[2]
        for da, db, sa, sb, stat in zip(a[0], b[0], a[1], b[1], a[2]):
            if stat == 0:
                assert (da, sa) == (db, sb)

    # Large adjugates (big p at high t) legitimately exceed the compiled
    # range; the forced path must refuse and the auto path must agree
    # with pure Python either way.
    if _kernels._reconstruct_fits(vecs, ctx.adj, ctx.det, p, _kernels._ACC_RECONSTRUCT):
        rc = reconstruct_batch(vecs, ctx.adj, ctx.det, p, False, backend="c")
        assert_equivalent(rc, rp)
        assert probe_batch(vecs, ctx.adj, ctx.det, p, backend="c") == probe_batch(
            vecs, ctx.adj, ctx.det, p, backend="python"
        )
    else:
        with pytest.raises(BackendUnavailable):
            reconstruct_batch(vecs, ctx.adj, ctx.det, p, False, backend="c")
    assert_equivalent(reconstruct_batch(vecs, ctx.adj, ctx.det, p, False), rp)


def test_pad_digit_agreement():
    cfg, coeffs, ctx, rows = _setup(13, 4, 3, 0)
    digits = [(5, -1), (-1, -1), (0, 12)]
    sigs = [sum(d) % 13 for d in digits]
    table = share_batch(digits, sigs, rows, 13)
    vecs = [row[:3] for row in table]
    for allow_pad in (True, False):
        rc = reconstruct_batch(vecs, ctx.adj, ctx.det, 13, allow_pad, backend="c")
        rp = reconstruct_batch(vecs, ctx.adj, ctx.det, 13, allow_pad, backend="python")
        assert rc[2] == rp[2]
        for dc, sc, dp, sp, stat in zip(rc[0], rc[1], rp[0], rp[1], rc[2]):
            if stat == 0:
                assert (dc, sc) == (dp, sp)
    ok = reconstruct_batch(vecs, ctx.adj, ctx.det, 13, True)
    assert ok[2] == [0, 0, 0]
    assert [tuple(d) for d in ok[0]] == list(digits)


def test_auto_choice_prefers_c_when_safe():
    assert _kernels.BACKEND == "c"
    cfg, coeffs, ctx, rows = _setup(99991, 4, 3, 1)
    digits, sigs = _blocks(cfg, 8, random.Random(1))
    # t*(p+1)*p ~ 3e10, far below 2^63: the unforced call must match both.
    auto = share_batch(digits, sigs, rows, cfg.p)
    assert auto == share_batch(digits, sigs, rows, cfg.p, backend="python")


def test_forced_c_rejects_oversized_modulus():
    p = 2305843009213693951  # Mersenne prime near 2^61; shares overflow i64
    cfg = SharingConfig(n=3, t=2, p=p, seed=0)
    coeffs = gen_coefficients(cfg)
    rows = [coeffs.row_for(k) for k in cfg.csp_ids]
    digits = [(p - 2,)]
    sigs = [(p - 2) % p]
    with pytest.raises(BackendUnavailable, match="exceed the compiled range"):
        share_batch(digits, sigs, rows, p, backend="c")
    # Unforced dispatch silently falls back and stays exact.
    table = share_batch(digits, sigs, rows, p)
    ctx = build_reconstruction(cfg.csp_ids[:2], coeffs, cfg)
    vecs = [row[:2] for row in table]
    with pytest.raises(BackendUnavailable, match="exceed the compiled range"):
        reconstruct_batch(vecs, ctx.adj, ctx.det, p, False, backend="c")
    d, s, st_ = reconstruct_batch(vecs, ctx.adj, ctx.det, p, False)
    assert st_ == [0] and d == [[p - 2]]


def test_forced_c_rejects_custom_hash():
    cfg, coeffs, ctx, rows = _setup(13, 4, 3, 0)
    with pytest.raises(BackendUnavailable, match="digit-sum"):
        reconstruct_batch(
            [[16, 43, 33]], ctx.adj, ctx.det, 13, False,
            hash_name="other", backend="c",
        )


def test_unknown_backend_name():
    with pytest.raises(ValueError):
        share_batch([(1, 1)], [2], [(1, 1, 1)], 13, backend="rust")


def test_empty_batches():
    cfg, coeffs, ctx, rows = _setup(13, 4, 3, 0)
    assert share_batch([], [], rows, 13) == []
    assert reconstruct_batch([], ctx.adj, ctx.det, 13, False) == ([], [], [])
    assert probe_batch([], ctx.adj, ctx.det, 13) == []
