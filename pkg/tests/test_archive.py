"""Checkpoint archive format: round-trips, checksums, version gating."""

import struct

import numpy as np
import pytest

from latentlink import archive as A


def _entries():
    rng = np.random.default_rng(0)
    return {
        "model.emb": rng.normal(size=(5, 3)).astype(np.float32),
        "model.gain": rng.normal(size=7).astype(np.float64),
        "opt.step": np.array([42], dtype=np.int64),
        "__meta__": A.pack_json({"kind": "test", "dims": [5, 3]}),
    }


def test_roundtrip_values(tmp_path):
    path = tmp_path / "ckpt.ldarm"
    entries = _entries()
    A.save_archive(path, entries)
    loaded = A.load_archive(path)
    assert list(loaded) == list(entries)
    for name in entries:
        np.testing.assert_array_equal(loaded[name], entries[name])
        assert loaded[name].dtype == entries[name].dtype
    assert A.unpack_json(loaded["__meta__"]) == {"kind": "test", "dims": [5, 3]}


def test_save_load_save_is_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.ldarm", tmp_path / "b.ldarm"
    A.save_archive(p1, _entries())
    A.save_archive(p2, A.load_archive(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_present(tmp_path):
    path = tmp_path / "c.ldarm"
    A.save_archive(path, _entries())
    assert path.read_bytes()[:6] == b"LDARM1"


def test_checksum_detects_corruption(tmp_path):
    path = tmp_path / "d.ldarm"
    A.save_archive(path, _entries())
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(A.ArchiveError, match="checksum"):
        A.load_archive(path)


def test_unknown_version_rejected(tmp_path):
    path = tmp_path / "e.ldarm"
    A.save_archive(path, _entries())
    raw = bytearray(path.read_bytes())
    raw[6:8] = struct.pack("<H", 99)
    body = bytes(raw[:-4])
    import zlib

    raw[-4:] = struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path.write_bytes(bytes(raw))
    with pytest.raises(A.ArchiveError, match="version"):
        A.load_archive(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "f.ldarm"
    path.write_bytes(b"NOTFMT" + b"\x00" * 16)
    with pytest.raises(A.ArchiveError, match="magic"):
        A.load_archive(path)
