"""Binary container: exact layout, bit-exact round trips, corruption handling."""

from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfdkit.container import (
    MAGIC,
    VERSION,
    bytes_to_f32_lanes,
    f32_lanes_to_bytes,
    read_container,
    write_container,
)
from rfdkit.errors import FormatError


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    entries = {
        "weights.layer0": rng.normal(size=(4, 7)).astype(np.float32),
        "bias": rng.normal(size=(7,)).astype(np.float32),
        "scalar": np.asarray([3.5], dtype=np.float32),
        "empty": np.zeros((0, 3), dtype=np.float32),
    }
    path = tmp_path / "model.rfdk"
    write_container(path, entries)
    back = read_container(path)
    assert list(back) == list(entries)
    for name in entries:
        assert back[name].dtype == np.float32
        assert back[name].shape == entries[name].shape
        assert np.array_equal(
            back[name].view(np.uint32), entries[name].view(np.uint32)
        ), f"entry {name} not bit-exact"


def test_header_layout(tmp_path):
    path = tmp_path / "one.rfdk"
    write_container(path, {"ab": np.asarray([[1.0, 2.0]], dtype=np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, count = struct.unpack_from("<II", raw, 4)
    assert version == VERSION and count == 1
    name_len = struct.unpack_from("<I", raw, 12)[0]
    assert name_len == 2 and raw[16:18] == b"ab"
    rank = struct.unpack_from("<I", raw, 18)[0]
    assert rank == 2
    dims = struct.unpack_from("<QQ", raw, 22)
    assert dims == (1, 2)
    payload = np.frombuffer(raw, dtype="<f4", count=2, offset=38)
    assert np.array_equal(payload, [1.0, 2.0])
    assert len(raw) == 38 + 8


@pytest.mark.parametrize("mutilate", ["magic", "truncate", "trailing", "version"])
def test_corruption_raises_format_error(tmp_path, mutilate):
    path = tmp_path / "c.rfdk"
    write_container(path, {"x": np.ones((3,), dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    if mutilate == "magic":
        raw[0] = ord(b"X")
    elif mutilate == "truncate":
        raw = raw[:-5]
    elif mutilate == "trailing":
        raw += b"\x00\x01"
    elif mutilate == "version":
        struct.pack_into("<I", raw, 4, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_container(path)


@settings(max_examples=30, deadline=None)
@given(st.binary(min_size=0, max_size=64))
def test_byte_lane_round_trip(raw):
    lanes = bytes_to_f32_lanes(raw)
    assert f32_lanes_to_bytes(lanes, len(raw)) == raw
