"""Writes container_golden.lrvc from the documented stream layout with struct."""
import struct
from pathlib import Path

header = b"LRVC" + struct.pack("<BHHBHB", 1, 1920, 1080, 32, 2, 1) + bytes(range(1, 9))


def frame(kind, chunks):
    out = struct.pack("<BB", kind, len(chunks))
    for c in chunks:
        out += struct.pack("<I", len(c)) + c
    return out


body = frame(0, [b"\x01\x02\x03", b""]) + frame(1, [b"\xaa", b"\xbb\xcc", b"", b"\xff" * 5])
Path(__file__).with_name("container_golden.lrvc").write_bytes(header + body)
