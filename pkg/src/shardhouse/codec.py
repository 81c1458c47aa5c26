"""Column codecs: typed values to digit blocks and back.

Every sensitive column is mapped onto little-endian base-p digit vectors of
a fixed width w chosen from the declared domain, then cut into blocks of
t - 1 digits (high digits zero-filled).  The mapping per kind:

* integer   - identity for non-negative domains, zig-zag for signed ones
* real      - fixed point: round(v * 10**scale), then the integer mapping
* character - the code point; must fit a single block
* string    - one character unit per block, no physical padding, so the
              share list length equals the string length
* date      - days since 1970-01-01, zig-zag (dates before 1970 are valid)
* boolean   - plaintext passthrough, never shared
* key       - plaintext passthrough, never shared

NULL never reaches the digit level: nullable columns store an explicit
null marker at every provider.

Widths are frozen in the catalog, so equal values always produce equal
digit vectors, which keeps share-literal equality rewriting exact.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

from .errors import ConfigError, DomainError
from .sharing import Block, SharingConfig, inner_signature

__all__ = [
    "ColumnCodec",
    "EncodedValue",
    "int_to_digits",
    "digits_to_int",
    "scalar_to_int",
    "int_to_scalar",
    "value_to_blocks",
    "blocks_to_value",
    "zigzag",
    "unzigzag",
]

EPOCH = datetime.date(1970, 1, 1)

SCALAR_KINDS = ("integer", "real", "character", "date")
PLAIN_KINDS = ("boolean", "key")
KINDS = SCALAR_KINDS + ("string",) + PLAIN_KINDS


def zigzag(x: int) -> int:
    """Map signed to unsigned: 0,-1,1,-2,2.. -> 0,1,2,3,4.."""
    return 2 * x if x >= 0 else -2 * x - 1


def unzigzag(u: int) -> int:
    return u // 2 if u % 2 == 0 else -(u + 1) // 2


def int_to_digits(v: int, p: int, w: int):
    """Little-endian base-p digits of v, exactly w of them."""
    if not (0 <= v < p**w):
        raise DomainError(f"value {v} does not fit {w} base-{p} digits")
    out = []
    for _ in range(w):
        out.append(v % p)
        v //= p
    return out


def digits_to_int(digits, p: int) -> int:
    """Inverse of :func:`int_to_digits` for any digit count."""
    acc = 0
    for d in reversed(digits):
        if not (0 <= d < p):
            raise DomainError(f"digit {d} out of range [0, {p})")
        acc = acc * p + d
    return acc


@dataclass(frozen=True)
class ColumnCodec:
    """Frozen per-column mapping parameters.

    width is the digit count per scalar unit; blocks_per_unit the block
    count it occupies after zero-filling to a block boundary.
    """

    name: str
    kind: str
    width: int = 0
    signed: bool = False
    scale: int = 0
    max_len: int = 0
    nullable: bool = False
    min_value: int = 0
    max_value: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown codec kind {self.kind!r}")

    @property
    def shared(self) -> bool:
        return self.kind not in PLAIN_KINDS

    def blocks_per_unit(self, config: SharingConfig) -> int:
        w = config.block_width
        return (self.width + w - 1) // w

    def block_count(self, config: SharingConfig):
        """Blocks per value: an int for scalars, None for strings
        (variable, one block group per character)."""
        if not self.shared:
            return 0
        if self.kind == "string":
            return None
        return self.blocks_per_unit(config)

    def validate_against(self, config: SharingConfig) -> None:
        if not self.shared:
            return
        if self.width < 1:
            raise ConfigError(f"column {self.name}: width must be positive")
        if self.kind in ("character", "string"):
            if self.width > config.block_width:
                raise ConfigError(
                    f"column {self.name}: code points must fit one block; "
                    f"p^(t-1) is too small"
                )
        if config.p**self.width <= self._domain_top():
            raise ConfigError(
                f"column {self.name}: p^w does not cover the declared domain"
            )

    def _domain_top(self) -> int:
        if self.kind in ("character", "string"):
            return self.max_value or 127
        if self.kind == "integer":
            if self.signed:
                mag = max(abs(self.min_value), abs(self.max_value))
                return zigzag(-mag) if mag else 0
            return self.max_value
        if self.kind == "real":
            mag = max(abs(self.min_value), abs(self.max_value)) * 10**self.scale
            return zigzag(-mag) if self.signed else mag
        if self.kind == "date":
            return zigzag(-self.max_value) if self.max_value else zigzag(-100_000)
        return 0

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "width": self.width,
            "signed": self.signed,
            "scale": self.scale,
            "max_len": self.max_len,
            "nullable": self.nullable,
            "min": self.min_value,
            "max": self.max_value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ColumnCodec":
        return cls(
            name=obj["name"],
            kind=obj["kind"],
            width=obj.get("width", 0),
            signed=obj.get("signed", False),
            scale=obj.get("scale", 0),
            max_len=obj.get("max_len", 0),
            nullable=obj.get("nullable", False),
            min_value=obj.get("min", 0),
            max_value=obj.get("max", 0),
        )


def derive_codec(column: dict, config: SharingConfig) -> ColumnCodec:
    """Build a frozen codec from an authored column description.

    The width is the smallest w with p**w strictly above the mapped domain
    top, computed once and persisted; widening later would silently change
    every share, so domain growth requires an explicit re-share.
    """
    kind = column["kind"]
    if kind not in KINDS:
        raise ConfigError(f"column {column.get('name')}: unknown kind {kind!r}")
    codec = ColumnCodec(
        name=column["name"],
        kind=kind,
        signed=bool(column.get("signed", False)),
        scale=int(column.get("scale", 0)),
        max_len=int(column.get("max_len", 0)),
        nullable=bool(column.get("nullable", False)),
        min_value=int(column.get("min", 0)),
        max_value=int(column.get("max", 0)),
    )
    if not codec.shared:
        return codec
    if kind == "string" and codec.max_len < 1:
        raise ConfigError(f"column {codec.name}: string columns need max_len")
    if kind in ("character", "string") and codec.max_value == 0:
        codec = _replace(codec, max_value=127)
    if kind == "integer" and not codec.signed and codec.max_value <= 0:
        raise ConfigError(f"column {codec.name}: unsigned integers need max > 0")
    if kind == "real" and codec.max_value == 0 and codec.min_value == 0:
        raise ConfigError(f"column {codec.name}: reals need a declared range")
    if kind == "date" and codec.max_value == 0:
        codec = _replace(codec, max_value=100_000)
    top = codec._domain_top()
    w = 1
    while config.p**w <= top:
        w += 1
    codec = _replace(codec, width=w)
    codec.validate_against(config)
    return codec


def _replace(codec: ColumnCodec, **kw) -> ColumnCodec:
    data = codec.to_json()
    data["min_value"] = data.pop("min")
    data["max_value"] = data.pop("max")
    data.update(kw)
    return ColumnCodec(**data)


def scalar_to_int(value, codec: ColumnCodec) -> int:
    """Map one scalar unit onto a non-negative integer."""
    kind = codec.kind
    if kind == "integer":
        v = int(value)
        if codec.signed:
            return zigzag(v)
        if v < 0:
            raise DomainError(f"column {codec.name}: negative value in unsigned column")
        return v
    if kind == "real":
        r = round(float(value) * 10**codec.scale)
        if codec.signed:
            return zigzag(r)
        if r < 0:
            raise DomainError(f"column {codec.name}: negative value in unsigned column")
        return r
    if kind in ("character", "string"):
        cp = ord(value)
        if cp > (codec.max_value or 127):
            raise DomainError(
                f"column {codec.name}: code point {cp} above declared maximum"
            )
        return cp
    if kind == "date":
        if isinstance(value, str):
            value = datetime.date.fromisoformat(value)
        return zigzag((value - EPOCH).days)
    raise ConfigError(f"kind {kind!r} has no scalar mapping")


def int_to_scalar(v: int, codec: ColumnCodec):
    kind = codec.kind
    if kind == "integer":
        return unzigzag(v) if codec.signed else v
    if kind == "real":
        r = unzigzag(v) if codec.signed else v
        return r / 10**codec.scale
    if kind in ("character", "string"):
        if not 0 <= v <= 0x10FFFF:
            raise DomainError(f"column {codec.name}: {v} is not a code point")
        return chr(v)
    if kind == "date":
        try:
            return EPOCH + datetime.timedelta(days=unzigzag(v))
        except OverflowError:
            raise DomainError(f"column {codec.name}: {v} is out of the date range")
    raise ConfigError(f"kind {kind!r} has no scalar mapping")


@dataclass(frozen=True)
class EncodedValue:
    """A value ready for sharing: null, plaintext passthrough, or blocks."""

    tag: str  # "null" | "plain" | "shared"
    plain: object = None
    blocks: tuple = ()

    @property
    def is_null(self) -> bool:
        return self.tag == "null"


def _unit_blocks(unit_int: int, codec: ColumnCodec, config: SharingConfig):
    w = config.block_width
    ell = codec.blocks_per_unit(config)
    digits = int_to_digits(unit_int, config.p, codec.width)
    digits.extend([0] * (ell * w - codec.width))
    out = []
    for b in range(ell):
        chunk = tuple(digits[b * w : (b + 1) * w])
        out.append(Block(chunk, inner_signature(chunk, config)))
    return out


def value_to_blocks(value, codec: ColumnCodec, config: SharingConfig) -> EncodedValue:
    """Encode one typed value into signed blocks (or a passthrough)."""
    if value is None:
        if not codec.nullable and codec.shared:
            raise DomainError(f"column {codec.name}: NULL in a non-nullable column")
        return EncodedValue("null")
    if not codec.shared:
        return EncodedValue("plain", plain=value)
    if codec.kind == "string":
        s = str(value)
        if len(s) > codec.max_len:
            raise DomainError(
                f"column {codec.name}: string longer than max_len {codec.max_len}"
            )
        blocks = []
        for ch in s:
            blocks.extend(_unit_blocks(scalar_to_int(ch, codec), codec, config))
        return EncodedValue("shared", blocks=tuple(blocks))
    return EncodedValue(
        "shared", blocks=tuple(_unit_blocks(scalar_to_int(value, codec), codec, config))
    )


def blocks_to_value(blocks, codec: ColumnCodec, config: SharingConfig):
    """Decode blocks back to the typed value.  Inverse of value_to_blocks."""
    if not codec.shared:
        raise ConfigError(f"column {codec.name} is not a shared column")
    ell = codec.blocks_per_unit(config)
    w = config.block_width
    units = []
    if len(blocks) % ell:
        raise DomainError(f"column {codec.name}: block count not a unit multiple")
    for u in range(0, len(blocks), ell):
        digits = []
        for b in blocks[u : u + ell]:
            digits.extend(b.digits)
        units.append(digits_to_int(digits, config.p))
    if codec.kind == "string":
        return "".join(int_to_scalar(v, codec) for v in units)
    if len(units) != 1:
        raise DomainError(f"column {codec.name}: scalar decoded from {len(units)} units")
    return int_to_scalar(units[0], codec)
