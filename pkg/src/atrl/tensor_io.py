"""Attention tensor container and its on-disk formats.

Binary layout (little endian throughout):

    bytes 0..3    magic ``ATN1`` (0x41 0x54 0x4E 0x31)
    bytes 4..19   four uint32: layers L, heads H, gen_len T, ctx_len S
    byte  20      flags (bit 0 = rows claimed stochastic, rest reserved)
    bytes 21..    L*H*T*S float32, C order over (layer, head, gen, ctx)

Values are stored in 32-bit floats; all downstream arithmetic promotes to
64-bit. Token metadata lives in a sidecar JSON file, see :class:`TokenMeta`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    DimOverflow,
    LengthMismatch,
    NegativeValue,
    NonFiniteValue,
    RowSumError,
    TruncatedPayload,
    UnknownModalityLabel,
)

MAGIC = b"ATN1"
DIM_CAP = 1 << 20
ROW_SUM_TOL = 1e-4
_HEADER = struct.Struct("<4sIIIIB")


def _check_values(values: np.ndarray, row_stochastic: bool) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteValue("attention values must be finite")
    if (values < 0).any():
        raise NegativeValue("attention values must be non-negative")
    if row_stochastic:
        sums = values.sum(axis=3, dtype=np.float64)
        err = np.abs(sums - 1.0).max()
        if err > ROW_SUM_TOL:
            raise RowSumError(
                f"row sums deviate from 1 by {err:.3e} (tolerance {ROW_SUM_TOL})"
            )


@dataclass
class AttentionTensor:
    """Per-layer, per-head attention over a decoded sequence.

    ``values[l, h, i, j]`` is the attention that generated token ``i`` pays
    to context position ``j``. Rows may cover fewer live positions than the
    rectangular width S; dead positions hold zeros, which keeps stochastic
    rows summing to one.
    """

    values: np.ndarray
    row_stochastic: bool = False

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 4:
            raise DimOverflow(f"expected 4-d values, got {vals.ndim}-d")
        for name, dim in zip(("layers", "heads", "gen_len", "ctx_len"), vals.shape):
            if not 1 <= dim <= DIM_CAP:
                raise DimOverflow(f"{name}={dim} outside [1, {DIM_CAP}]")
        _check_values(vals, self.row_stochastic)
        self.values = vals

    @property
    def layers(self) -> int:
        return self.values.shape[0]

    @property
    def heads(self) -> int:
        return self.values.shape[1]

    @property
    def gen_len(self) -> int:
        return self.values.shape[2]

    @property
    def ctx_len(self) -> int:
        return self.values.shape[3]


def load_attention(path: str) -> AttentionTensor:
    """Read an ATN1 file, rejecting malformed headers and payloads."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagic(f"{path!r} is not an ATN1 file")
    if len(blob) < _HEADER.size:
        raise TruncatedPayload(f"{path!r}: header cut short at {len(blob)} bytes")
    _, layers, heads, gen_len, ctx_len, flags = _HEADER.unpack_from(blob)
    for name, dim in (("layers", layers), ("heads", heads),
                      ("gen_len", gen_len), ("ctx_len", ctx_len)):
        if not 1 <= dim <= DIM_CAP:
            raise DimOverflow(f"{name}={dim} outside [1, {DIM_CAP}]")
    expected = layers * heads * gen_len * ctx_len
    payload = blob[_HEADER.size:]
    if len(payload) != expected * 4:
        raise TruncatedPayload(
            f"expected {expected} float32 values, file holds {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(layers, heads, gen_len, ctx_len)
    return AttentionTensor(values=values.copy(), row_stochastic=bool(flags & 1))


def save_attention(tensor: AttentionTensor, path: str) -> None:
    """Write ``tensor`` so that a reload is bit-identical. OS errors propagate."""
    header = _HEADER.pack(
        MAGIC,
        tensor.layers,
        tensor.heads,
        tensor.gen_len,
        tensor.ctx_len,
        1 if tensor.row_stochastic else 0,
    )
    body = np.ascontiguousarray(tensor.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


VISUAL = "v"
TEXT = "l"


@dataclass
class TokenMeta:
    """Modality labels for context positions plus optional decoded strings.

    ``ctx_modality`` holds one character per context column: ``v`` for
    visual, ``l`` for language. A sequence may legitimately have no visual
    columns; connectivity computation is where that becomes an error.
    """

    ctx_modality: str
    gen_text: list[str] | None = None
    visual_index_set: frozenset[int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        bad = set(self.ctx_modality) - {VISUAL, TEXT}
        if bad:
            raise UnknownModalityLabel(
                f"modality labels must be 'v' or 'l', found {sorted(bad)!r}"
            )
        self.visual_index_set = frozenset(
            i for i, c in enumerate(self.ctx_modality) if c == VISUAL
        )

    @property
    def ctx_len(self) -> int:
        return len(self.ctx_modality)


def load_token_meta(path: str, ctx_len: int | None = None,
                    gen_len: int | None = None) -> TokenMeta:
    """Read sidecar metadata, optionally checking lengths against a tensor."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "ctx_modality" not in raw:
        raise UnknownModalityLabel(f"{path!r}: missing ctx_modality field")
    modality = raw["ctx_modality"]
    if not isinstance(modality, str):
        raise UnknownModalityLabel(f"{path!r}: ctx_modality must be a string")
    gen_text = raw.get("gen_text")
    if gen_text is not None and (
        not isinstance(gen_text, list)
        or any(not isinstance(t, str) for t in gen_text)
    ):
        raise UnknownModalityLabel(f"{path!r}: gen_text must be a list of strings")
    meta = TokenMeta(ctx_modality=modality, gen_text=gen_text)
    if ctx_len is not None and meta.ctx_len != ctx_len:
        raise LengthMismatch(
            f"ctx_modality length {meta.ctx_len} != tensor ctx_len {ctx_len}"
        )
    if gen_len is not None and gen_text is not None and len(gen_text) != gen_len:
        raise LengthMismatch(
            f"gen_text length {len(gen_text)} != tensor gen_len {gen_len}"
        )
    return meta


def save_token_meta(meta: TokenMeta, path: str) -> None:
    doc: dict = {"ctx_modality": meta.ctx_modality}
    if meta.gen_text is not None:
        doc["gen_text"] = meta.gen_text
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
