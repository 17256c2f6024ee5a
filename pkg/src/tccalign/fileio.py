"""Shared binary file plumbing: typed format errors and little-endian helpers.

All on-disk numeric payloads are little-endian; floats are 64-bit.  Writers
are byte-deterministic so golden-file and round-trip tests can compare raw
bytes.
"""

from __future__ import annotations

import struct

import numpy as np


class FileFormatError(Exception):
    """Base class for malformed on-disk artifacts."""


class BadMagicError(FileFormatError):
    pass


class VersionMismatchError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class SizeOverflowError(FileFormatError):
    pass


# Refuse to allocate for absurd header values (~8 GiB of float64).
MAX_ELEMENTS = 1 << 30


def read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"unexpected end of file while reading {what}")
    return data


def expect_magic(f, magic: bytes, path) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise BadMagicError(f"{path}: bad magic {got!r}, expected {magic!r}")


def expect_version(f, expected: int, path) -> None:
    got = read_u32(f)
    if got != expected:
        raise VersionMismatchError(
            f"{path}: format version {got}, this build reads version {expected}")


def read_u32(f) -> int:
    return struct.unpack("<I", read_exact(f, 4, "u32 field"))[0]


def read_u64(f) -> int:
    return struct.unpack("<Q", read_exact(f, 8, "u64 field"))[0]


def write_u32(f, value: int) -> None:
    f.write(struct.pack("<I", value))


def write_u64(f, value: int) -> None:
    f.write(struct.pack("<Q", value))


def write_f64_array(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_f64_array(f, count: int, what: str) -> np.ndarray:
    if count > MAX_ELEMENTS:
        raise SizeOverflowError(f"{what}: element count {count} exceeds limit")
    raw = read_exact(f, count * 8, what)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def expect_eof(f, path) -> None:
    if f.read(1):
        raise FileFormatError(f"{path}: trailing bytes after payload")
