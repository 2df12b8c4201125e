"""Binary attention container and token-metadata sidecar."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from atrl.errors import (
    BadMagic,
    DimOverflow,
    LengthMismatch,
    NegativeValue,
    NonFiniteValue,
    RowSumError,
    TruncatedPayload,
    UnknownModalityLabel,
)
from atrl.tensor_io import (
    AttentionTensor,
    TokenMeta,
    load_attention,
    load_token_meta,
    save_attention,
    save_token_meta,
)
from helpers import random_attention


def test_header_dims_echoed(tmp_path):
    rng = np.random.default_rng(0)
    t = random_attention(rng, layers=2, heads=2, gen_len=3, ctx_len=5)
    path = tmp_path / "t.atn1"
    save_attention(t, str(path))
    back = load_attention(str(path))
    assert back.values.shape == (2, 2, 3, 5)
    assert back.row_stochastic


def test_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(1)
    for i in range(10):
        t = random_attention(
            rng,
            layers=int(rng.integers(1, 4)),
            heads=int(rng.integers(1, 4)),
            gen_len=int(rng.integers(1, 9)),
            ctx_len=int(rng.integers(1, 9)),
            row_stochastic=bool(i % 2),
        )
        path = tmp_path / f"t{i}.atn1"
        save_attention(t, str(path))
        back = load_attention(str(path))
        assert back.values.tobytes() == t.values.tobytes()
        assert back.row_stochastic == t.row_stochastic


def test_zero_tensor_round_trip(tmp_path):
    t = AttentionTensor(values=np.zeros((1, 1, 2, 3), dtype=np.float32))
    path = tmp_path / "z.atn1"
    save_attention(t, str(path))
    assert (load_attention(str(path)).values == 0).all()


def test_truncated_payload(tmp_path):
    rng = np.random.default_rng(2)
    t = random_attention(rng, layers=2, heads=2, gen_len=3, ctx_len=5)
    path = tmp_path / "t.atn1"
    save_attention(t, str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])  # drop one float32
    with pytest.raises(TruncatedPayload):
        load_attention(str(path))


def test_bad_magic(tmp_path):
    path = tmp_path / "not.atn1"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(BadMagic):
        load_attention(str(path))


def test_truncated_header(tmp_path):
    path = tmp_path / "short.atn1"
    path.write_bytes(b"ATN1\x01\x00")
    with pytest.raises(TruncatedPayload):
        load_attention(str(path))


def test_dim_overflow_in_header(tmp_path):
    header = struct.pack("<4sIIIIB", b"ATN1", (1 << 20) + 1, 1, 1, 1, 0)
    path = tmp_path / "big.atn1"
    path.write_bytes(header)
    with pytest.raises(DimOverflow):
        load_attention(str(path))


def test_nan_payload_rejected(tmp_path):
    vals = np.zeros((1, 1, 1, 4), dtype="<f4")
    vals[0, 0, 0, 1] = np.nan
    header = struct.pack("<4sIIIIB", b"ATN1", 1, 1, 1, 4, 0)
    path = tmp_path / "nan.atn1"
    path.write_bytes(header + vals.tobytes())
    with pytest.raises(NonFiniteValue):
        load_attention(str(path))


def test_negative_payload_rejected(tmp_path):
    vals = np.full((1, 1, 1, 4), -0.25, dtype="<f4")
    header = struct.pack("<4sIIIIB", b"ATN1", 1, 1, 1, 4, 0)
    path = tmp_path / "neg.atn1"
    path.write_bytes(header + vals.tobytes())
    with pytest.raises(NegativeValue):
        load_attention(str(path))


def test_row_sum_claim_enforced():
    bad = np.full((1, 1, 2, 4), 0.3, dtype=np.float32)
    with pytest.raises(RowSumError):
        AttentionTensor(values=bad, row_stochastic=True)
    AttentionTensor(values=bad, row_stochastic=False)  # fine unclaimed


def test_reserved_flag_bits_ignored(tmp_path):
    vals = np.full((1, 1, 1, 4), 0.25, dtype="<f4")
    header = struct.pack("<4sIIIIB", b"ATN1", 1, 1, 1, 4, 0b10)
    path = tmp_path / "flags.atn1"
    path.write_bytes(header + vals.tobytes())
    t = load_attention(str(path))
    assert not t.row_stochastic


def test_save_to_unwritable_path(tmp_path):
    rng = np.random.default_rng(3)
    t = random_attention(rng)
    with pytest.raises(OSError):
        save_attention(t, str(tmp_path / "no" / "such" / "dir" / "t.atn1"))


# --- token metadata ----------------------------------------------------------

def test_meta_visual_index_set():
    meta = TokenMeta(ctx_modality="vvlll")
    assert meta.visual_index_set == frozenset({0, 1})
    assert meta.ctx_len == 5


def test_meta_unknown_label():
    with pytest.raises(UnknownModalityLabel):
        TokenMeta(ctx_modality="vvxll")


def test_meta_all_language_loads():
    meta = TokenMeta(ctx_modality="lll")
    assert meta.visual_index_set == frozenset()


def test_meta_round_trip(tmp_path):
    meta = TokenMeta(ctx_modality="vvll", gen_text=["alpha", "beta"])
    path = tmp_path / "meta.json"
    save_token_meta(meta, str(path))
    back = load_token_meta(str(path))
    assert back.ctx_modality == meta.ctx_modality
    assert back.gen_text == meta.gen_text


def test_meta_length_check(tmp_path):
    path = tmp_path / "meta.json"
    save_token_meta(TokenMeta(ctx_modality="vvll"), str(path))
    with pytest.raises(LengthMismatch):
        load_token_meta(str(path), ctx_len=7)


def test_meta_missing_field(tmp_path):
    path = tmp_path / "meta.json"
    path.write_text(json.dumps({"labels": "vvll"}))
    with pytest.raises(UnknownModalityLabel):
        load_token_meta(str(path))
