"""Threshold multi-secret sharing over integer blocks with dual signatures.

A block packs t - 1 digits, each in [0, p - 1] (or the padding value -1),
together with an inner signature computed from the digits.  Sharing turns a
block into one integer per provider:

    e_k = sum_h (d_h + 2) * a[k][h]  +  sig * a[k][t - 1]

where ``a[k]`` is provider k's row of a public coefficient matrix whose
every t-row submatrix is invertible over the rationals.  Any t providers can
invert their joint system exactly with integer arithmetic; fewer than t
learn nothing beyond the magnitude of the shares.  No modular reduction is
applied to shares: reconstruction relies on exact divisibility by the group
determinant, and a quotient that is not an integer is itself evidence of
tampering.

Two signatures guard the data:

* the inner signature travels inside the shared block (it is one of the t
  unknowns) and is checked after reconstruction;
* the outer signature is stored next to each share and lets both the
  provider and the client audit a share without reconstructing anything.

The default inner signature is the digit sum mod p, which is additive:
summing the shares of many blocks slot-wise yields the share of the
digit-wise sums, enabling aggregate queries to run on providers directly.
"""

from __future__ import annotations

import hashlib
import itertools
import random
from dataclasses import dataclass

from . import _kernels
from .errors import ConfigError, CorruptionError

__all__ = [
    "SharingConfig",
    "Block",
    "ShareBundle",
    "CoefficientSet",
    "ReconstructionContext",
    "gen_coefficients",
    "make_blocks",
    "inner_signature",
    "share_block",
    "share_blocks",
    "outer_signature",
    "verify_outer",
    "build_reconstruction",
    "reconstruct_block",
    "reconstruct_blocks",
    "register_inner_hash",
    "int_det",
    "adjugate",
    "is_probable_prime",
]

GEN_RETRY_BUDGET = 1000

PAD = -1

# Reconstruction status codes shared with the kernel backends.
OK = 0
NOT_DIVISIBLE = 1
OUT_OF_RANGE = 2
BAD_SIGNATURE = 3

_STATUS_TEXT = {
    NOT_DIVISIBLE: "share vector is not divisible by the group determinant",
    OUT_OF_RANGE: "reconstructed digits fall outside the digit domain",
    BAD_SIGNATURE: "inner signature does not match the reconstructed digits",
}


def is_probable_prime(n: int, rounds: int = 24) -> bool:
    """Miller-Rabin primality test, deterministic for 64-bit inputs."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
    for q in small:
        if n % q == 0:
            return n == q
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in small:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


# ---------------------------------------------------------------------------
# Inner hash registry


@dataclass(frozen=True)
class _InnerHash:
    name: str
    fn: object
    additive: bool


def _digit_sum(digits, p):
    return sum(digits) % p


_INNER_HASHES = {"digit-sum": _InnerHash("digit-sum", _digit_sum, True)}


def register_inner_hash(name: str, fn, additive: bool = False) -> None:
    """Register a custom inner signature ``fn(digits, p) -> int in [0, p)``.

    Only additive hashes allow provider-side aggregation; the default
    digit-sum hash is additive.
    """
    if name in _INNER_HASHES:
        raise ConfigError(f"inner hash {name!r} already registered")
    _INNER_HASHES[name] = _InnerHash(name, fn, additive)


def get_inner_hash(name: str) -> _InnerHash:
    try:
        return _INNER_HASHES[name]
    except KeyError:
        raise ConfigError(f"unknown inner hash {name!r}") from None


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class SharingConfig:
    """Public parameters of one sharing deployment.

    n          number of providers
    t          reconstruction threshold, 2 <= t <= n
    p          prime digit modulus; digits live in [0, p - 1]
    p2         prime modulus of the outer signature (default 67)
    csp_ids    distinct provider identifiers, defaults to 1..n
    seed       seed for the deterministic coefficient draw
    inner_hash name of the registered inner signature
    """

    n: int
    t: int
    p: int
    p2: int = 67
    csp_ids: tuple = ()
    seed: int = 0
    inner_hash: str = "digit-sum"

    def __post_init__(self):
        if self.t < 2:
            raise ConfigError("threshold t must be at least 2")
        if self.n < self.t:
            raise ConfigError("need at least t providers")
        if not is_probable_prime(self.p) or self.p < 3:
            raise ConfigError("p must be an odd prime")
        if not is_probable_prime(self.p2):
            raise ConfigError("p2 must be prime")
        ids = tuple(self.csp_ids) or tuple(range(1, self.n + 1))
        if len(ids) != self.n or len(set(ids)) != self.n:
            raise ConfigError("csp_ids must list n distinct identifiers")
        object.__setattr__(self, "csp_ids", ids)
        get_inner_hash(self.inner_hash)

    @property
    def block_width(self) -> int:
        """Digits carried per block."""
        return self.t - 1

    def hash_fn(self) -> _InnerHash:
        return get_inner_hash(self.inner_hash)


# ---------------------------------------------------------------------------
# Blocks and bundles


@dataclass(frozen=True)
class Block:
    """t - 1 digits plus the inner signature binding them."""

    digits: tuple
    sig: int = None

    def signed(self, config: SharingConfig) -> "Block":
        return Block(self.digits, inner_signature(self.digits, config))


@dataclass(frozen=True)
class ShareBundle:
    """One provider's view of one block: the share and its outer signature."""

    csp_id: int
    e: int
    s_out: int


def make_blocks(data, config: SharingConfig):
    """Split a sequence of raw integers into unsigned blocks of t - 1 digits.

    Every datum must lie in [0, p - 2); the final block is padded with -1.
    Signatures are attached separately, see :func:`inner_signature`.
    """
    w = config.block_width
    limit = config.p - 2
    out = []
    for i, d in enumerate(data):
        if not (0 <= d < limit):
            raise ConfigError(f"datum at index {i} out of range [0, {limit})")
    chunk = []
    for d in data:
        chunk.append(d)
        if len(chunk) == w:
            out.append(Block(tuple(chunk)))
            chunk = []
    if chunk:
        chunk.extend([PAD] * (w - len(chunk)))
        out.append(Block(tuple(chunk)))
    return out


def inner_signature(digits, config: SharingConfig) -> int:
    """Signature of a digit tuple, reduced into [0, p).

    Uses the mathematical modulus, so each -1 padding digit contributes
    p - 1 under the default digit-sum hash.
    """
    h = config.hash_fn()
    sig = h.fn(digits, config.p)
    if not (0 <= sig < config.p):
        raise ConfigError(f"inner hash {h.name!r} left its range [0, p)")
    return sig


def outer_signature(e: int, p2: int) -> int:
    """Public share checksum: the share reduced mod p2."""
    return e % p2


def verify_outer(bundle: ShareBundle, p2: int) -> bool:
    return bundle.e % p2 == bundle.s_out


# ---------------------------------------------------------------------------
# Integer linear algebra (exact)


def int_det(matrix) -> int:
    """Exact determinant of a square integer matrix (fraction-free Bareiss)."""
    m = [list(row) for row in matrix]
    k = len(m)
    if any(len(row) != k for row in m):
        raise ConfigError("determinant requires a square matrix")
    sign = 1
    prev = 1
    for col in range(k - 1):
        if m[col][col] == 0:
            for r in range(col + 1, k):
                if m[r][col] != 0:
                    m[col], m[r] = m[r], m[col]
                    sign = -sign
                    break
            else:
                return 0
        for r in range(col + 1, k):
            for c in range(col + 1, k):
                m[r][c] = (m[r][c] * m[col][col] - m[r][col] * m[col][c]) // prev
            m[r][col] = 0
        prev = m[col][col]
    return sign * m[k - 1][k - 1]


def _minor(matrix, i, j):
    return [
        [matrix[r][c] for c in range(len(matrix)) if c != j]
        for r in range(len(matrix))
        if r != i
    ]


def adjugate(matrix):
    """Exact adjugate: ``adjugate(A) @ A == det(A) * I`` over the integers."""
    k = len(matrix)
    if k == 1:
        return [[1]]
    adj = [[0] * k for _ in range(k)]
    for i in range(k):
        for j in range(k):
            cof = int_det(_minor(matrix, i, j))
            if (i + j) % 2:
                cof = -cof
            adj[j][i] = cof
    return adj


# ---------------------------------------------------------------------------
# Coefficients


@dataclass(frozen=True)
class CoefficientSet:
    """Public n x t coefficient matrix, one row per provider.

    Invariant: rows are pairwise distinct and every t-row submatrix has a
    nonzero determinant, so any t providers form an invertible system.  The
    accepted matrix, not the generator that drew it, is the compatibility
    root: persist it and reload it verbatim.
    """

    matrix: tuple
    csp_ids: tuple

    @classmethod
    def from_matrix(cls, matrix, config: SharingConfig) -> "CoefficientSet":
        rows = tuple(tuple(int(a) for a in row) for row in matrix)
        cs = cls(rows, config.csp_ids)
        cs.validate(config)
        return cs

    def validate(self, config: SharingConfig) -> None:
        n, t, p = config.n, config.t, config.p
        if len(self.matrix) != n or any(len(row) != t for row in self.matrix):
            raise ConfigError("coefficient matrix must be n rows of t entries")
        for row in self.matrix:
            for a in row:
                if not (0 <= a < p):
                    raise ConfigError("coefficient out of range [0, p)")
        if len(set(self.matrix)) != n:
            raise ConfigError("coefficient rows must be pairwise distinct")
        for subset in itertools.combinations(range(n), t):
            sub = [self.matrix[i] for i in subset]
            if int_det(sub) == 0:
                ids = tuple(self.csp_ids[i] for i in subset)
                raise ConfigError(f"singular provider subset {ids}")

    def row_for(self, csp_id: int):
        try:
            return self.matrix[self.csp_ids.index(csp_id)]
        except ValueError:
            raise ConfigError(f"unknown provider id {csp_id}") from None


def _row_seed(seed: int, csp_id: int, attempt: int) -> int:
    raw = f"{seed}:{csp_id}:{attempt}".encode()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "big")


def gen_coefficients(config: SharingConfig) -> CoefficientSet:
    """Draw the public coefficient matrix deterministically from the config.

    Entries are uniform in [0, p).  The draw is retried, with the attempt
    counter folded into each row's seed, until rows are distinct and every
    t-row submatrix is invertible; a budget of 1000 attempts failing means
    p is too small for the requested n and t.
    """
    for attempt in range(GEN_RETRY_BUDGET):
        matrix = []
        for csp_id in config.csp_ids:
            rng = random.Random(_row_seed(config.seed, csp_id, attempt))
            matrix.append(tuple(rng.randrange(config.p) for _ in range(config.t)))
        try:
            return CoefficientSet.from_matrix(matrix, config)
        except ConfigError:
            continue
    raise ConfigError(
        f"no valid coefficient matrix in {GEN_RETRY_BUDGET} attempts; "
        f"p={config.p} is too small for n={config.n}, t={config.t}"
    )


# ---------------------------------------------------------------------------
# Sharing


def _share_one(digits, sig, row):
    acc = 0
    for h, d in enumerate(digits):
        acc += (d + 2) * row[h]
    return acc + sig * row[len(digits)]


def share_block(block: Block, coeffs: CoefficientSet, csp_id: int, config: SharingConfig) -> ShareBundle:
    """Share one signed block for one provider."""
    if block.sig is None:
        raise ConfigError("block must be signed before sharing")
    if len(block.digits) != config.block_width:
        raise ConfigError("block width does not match t - 1")
    e = _share_one(block.digits, block.sig, coeffs.row_for(csp_id))
    return ShareBundle(csp_id, e, outer_signature(e, config.p2))


def share_blocks(blocks, coeffs: CoefficientSet, config: SharingConfig, csp_ids=None, backend=None):
    """Share many signed blocks for many providers at once.

    Returns ``{csp_id: [ShareBundle, ...]}`` aligned with ``blocks``.  The
    hot loop runs in the compiled kernel when it is available and the share
    magnitude bound fits 64-bit integers.
    """
    ids = tuple(csp_ids) if csp_ids is not None else config.csp_ids
    rows = [coeffs.row_for(k) for k in ids]
    digits = []
    sigs = []
    for b in blocks:
        if b.sig is None:
            raise ConfigError("blocks must be signed before sharing")
        digits.append(b.digits)
        sigs.append(b.sig)
    table = _kernels.share_batch(digits, sigs, rows, config.p, backend=backend)
    p2 = config.p2
    out = {}
    for j, k in enumerate(ids):
        out[k] = [ShareBundle(k, e, e % p2) for e in (row[j] for row in table)]
    return out


# ---------------------------------------------------------------------------
# Reconstruction


@dataclass(frozen=True)
class ReconstructionContext:
    """Precomputed exact inverse for one group of t providers.

    ``adj @ A == det * I`` holds over the integers, where A stacks the
    group's coefficient rows in group order.
    """

    group: tuple
    matrix: tuple
    adj: tuple
    det: int
    config: SharingConfig


def build_reconstruction(group, coeffs: CoefficientSet, config: SharingConfig) -> ReconstructionContext:
    """Build the exact reconstruction context for a group of t provider ids."""
    group = tuple(group)
    if len(group) != config.t or len(set(group)) != config.t:
        raise ConfigError(f"group must name {config.t} distinct providers")
    matrix = [list(coeffs.row_for(k)) for k in group]
    det = int_det(matrix)
    if det == 0:
        raise ConfigError(f"provider group {group} is singular; catalog is corrupt")
    adj = adjugate(matrix)
    t = config.t
    for i in range(t):
        for j in range(t):
            acc = sum(adj[i][h] * matrix[h][j] for h in range(t))
            if acc != (det if i == j else 0):
                raise ConfigError("adjugate check failed; catalog is corrupt")
    return ReconstructionContext(
        group=group,
        matrix=tuple(tuple(r) for r in matrix),
        adj=tuple(tuple(r) for r in adj),
        det=det,
        config=config,
    )


def _raise_status(status, ctx, block_index=None):
    raise CorruptionError(
        _STATUS_TEXT.get(status, "reconstruction failed"),
        group=ctx.group,
        block=block_index,
    )


def reconstruct_block(shares, ctx: ReconstructionContext, allow_pad: bool = True) -> Block:
    """Recover one block from the t shares of the context's group.

    ``shares`` maps provider id to share integer (or lists them in group
    order).  Raises :class:`CorruptionError` when the share vector is not
    exactly divisible by the group determinant, when digits leave their
    domain, or when the inner signature disagrees.
    """
    vec = _share_vector(shares, ctx)
    digits, sigs, status = _kernels.reconstruct_batch(
        [vec], ctx.adj, ctx.det, ctx.config.p, allow_pad,
        hash_name=ctx.config.inner_hash,
    )
    if status[0] != OK:
        _raise_status(status[0], ctx)
    return Block(tuple(digits[0]), sigs[0])


def reconstruct_blocks(share_rows, ctx: ReconstructionContext, allow_pad: bool = True, backend=None):
    """Batch variant: ``share_rows`` is a sequence of t-share vectors in
    group order.  Returns a list of Blocks; raises on the first bad block."""
    digits, sigs, status = _kernels.reconstruct_batch(
        share_rows, ctx.adj, ctx.det, ctx.config.p, allow_pad,
        hash_name=ctx.config.inner_hash, backend=backend,
    )
    blocks = []
    for i, st in enumerate(status):
        if st != OK:
            _raise_status(st, ctx, block_index=i)
        blocks.append(Block(tuple(digits[i]), sigs[i]))
    return blocks


def _share_vector(shares, ctx: ReconstructionContext):
    if isinstance(shares, dict):
        missing = [k for k in ctx.group if k not in shares]
        if missing:
            raise ConfigError(f"missing shares for providers {missing}")
        return [int(shares[k]) for k in ctx.group]
    vec = [int(e) for e in shares]
    if len(vec) != ctx.config.t:
        raise ConfigError("share vector length must equal t")
    return vec
