#!/usr/bin/env python3
"""Writes the CramFS, JFFS2, UBIFS and RomFS reference images used by the
scanner tests, and checks each one with an independent reader.

    python3 tools/fsgen.py crates/core/tests/fixtures

Readers: pycramfs, jefferson, ubi_reader, romfs (pip). The RomFS image is
built by the romfs package's own writer. SquashFS comes from
tools/squashfs-gen.
"""

import binascii
import struct
import sys
import zlib
from pathlib import Path

FILES = {
    "hostname": b"wemo\n",
    "plugd": b"#!/bin/sh\necho starting plug daemon\n" * 64,
}
MTIME = 1_500_000_000


def pad4(b):
    return b + b"\0" * (-len(b) % 4)


# CramFS (little-endian, version 2 layout with sorted directories).

def cramfs_inode(mode, size, namelen_words, offset_words, uid=0, gid=0):
    w0 = mode | (uid << 16)
    w1 = size | (gid << 24)
    w2 = namelen_words | (offset_words << 6)
    return struct.pack("<III", w0, w1, w2)


def make_cramfs():
    page = 4096
    names = sorted(FILES)
    entries_len = sum(12 + len(pad4(n.encode())) for n in names)
    data_start = 76 + entries_len
    entries = b""
    data = b""
    for name in names:
        content = FILES[name]
        blocks = [zlib.compress(content[i:i + page]) for i in range(0, len(content), page)]
        ptr_base = data_start + len(data)
        end = ptr_base + 4 * len(blocks)
        ptrs = b""
        for blk in blocks:
            end += len(blk)
            ptrs += struct.pack("<I", end)
        nm = pad4(name.encode())
        entries += cramfs_inode(0o100644, len(content), len(nm) // 4, ptr_base // 4) + nm
        data += pad4(ptrs + b"".join(blocks))
    root = cramfs_inode(0o040755, entries_len, 0, 76 // 4)
    size = data_start + len(data)
    size += -size % 4096
    body = root + entries + data
    body += b"\0" * (size - 64 - len(body))
    flags = 0x1 | 0x2
    fsid = lambda crc: struct.pack("<IIII", crc, 0, (size + page - 1) // page, 1 + len(names))
    head = lambda crc: (
        struct.pack("<IIII", 0x28CD3D45, size, flags, 0)
        + b"Compressed ROMFS"
        + fsid(crc)
        + b"plugnet".ljust(16, b"\0")
    )
    crc = zlib.crc32(head(0) + body)
    return head(crc) + body


def check_cramfs(path):
    import pycramfs

    with pycramfs.Cramfs.from_file(path) as fs:
        assert fs.calculate_crc() == fs.super.fsid.crc, "cramfs crc"
        got = {f.name: f.read_bytes() for f in fs if f.is_file}
    assert got == FILES, got


# JFFS2 (little-endian).

def mtd_crc(data):
    return (binascii.crc32(data, -1) ^ -1) & 0xFFFFFFFF


def jffs2_dirent(pino, ino, version, name, dtype=8):
    fixed = struct.pack("<IIIIBBH", pino, version, ino, MTIME, len(name), dtype, 0)
    head = struct.pack("<HHI", 0x1985, 0xE001, 40 + len(name))
    head += struct.pack("<I", mtd_crc(head))
    node_crc = mtd_crc(head + fixed)
    return pad4(head + fixed + struct.pack("<II", node_crc, mtd_crc(name)) + name)


def jffs2_inode(ino, version, mode, content):
    comp = zlib.compress(content)
    fixed = struct.pack(
        "<IIIHHIIIIIIIBBH",
        ino, version, mode, 0, 0, len(content), MTIME, MTIME, MTIME,
        0, len(comp), len(content), 6, 0, 0,
    )
    head = struct.pack("<HHI", 0x1985, 0xE002, 68 + len(comp))
    head += struct.pack("<I", mtd_crc(head))
    node_crc = mtd_crc(head + fixed)
    return pad4(head + fixed + struct.pack("<II", mtd_crc(comp), node_crc) + comp)


def make_jffs2():
    erase = 0x2000
    out = b""
    for i, name in enumerate(sorted(FILES), start=2):
        out += jffs2_dirent(1, i, 1, name.encode())
        out += jffs2_inode(i, 1, 0o100644, FILES[name])
    return out + b"\xff" * (-len(out) % erase)


def check_jffs2(path):
    from jefferson import jffs2

    jffs2.set_endianness("<")
    fs = jffs2.scan_fs(Path(path).read_bytes(), "<")
    dirents = fs[jffs2.JFFS2_NODETYPE_DIRENT]
    inodes = fs[jffs2.JFFS2_NODETYPE_INODE]
    got = {}
    for ino, d in dirents.items():
        assert d.node_crc_match and d.name_crc_match
        (node,) = inodes[ino]
        assert node.node_crc_match and node.data_crc_match
        got[d.name.decode()] = node.data
    assert got == FILES, got


# UBIFS: superblock in LEB 0, master nodes in LEBs 1 and 2.

UBIFS_MAGIC = 0x06101831


def ubifs_node(node_type, sqnum, body, total):
    body = body + b"\0" * (total - 24 - len(body))
    tail = struct.pack("<QIBB2s", sqnum, total, node_type, 0, b"\0\0") + body
    crc = (~zlib.crc32(tail)) & 0xFFFFFFFF
    return struct.pack("<II", UBIFS_MAGIC, crc) + tail


def make_ubifs():
    leb_size, leb_cnt, min_io = 8192, 4, 512
    sb = struct.pack(
        "<2sBBIIIIIQIIIIIIIH2sIIQI16sI",
        b"\0\0", 0, 0, 0, min_io, leb_size, leb_cnt, 16, 16384,
        1, 1, 1, 1, 1, 0, 4, 0, b"\0\0", 0, 1, 4096, 0, bytes(range(16)), 4,
    )
    mst = struct.pack("<QQ", 65, 1) + bytes(16)
    image = bytearray(b"\xff" * leb_size * leb_cnt)
    image[0:4096] = ubifs_node(6, 1, sb, 4096)
    for lnum in (1, 2):
        node = ubifs_node(7, 2, mst, 512)
        image[lnum * leb_size:lnum * leb_size + len(node)] = node
    return bytes(image)


def check_ubifs(path):
    from ubireader import ubi_io
    from ubireader.ubifs import ubifs

    data = Path(path).read_bytes()
    leb_size = struct.unpack_from("<I", data, 24 + 12)[0]
    f = ubi_io.ubi_file(str(path), leb_size, 0, len(data))
    fs = ubifs(f)
    assert fs.superblock_node.leb_size == leb_size
    assert fs.superblock_node.leb_cnt * leb_size == len(data)
    assert fs.master_node is not None and fs.master_node.highest_inum == 65


# RomFS via the romfs package's writer.

def make_romfs():
    import io
    import tempfile
    from romfs.writer import RomFSWriter

    with tempfile.TemporaryDirectory() as tmp:
        for name, content in FILES.items():
            (Path(tmp) / name).write_bytes(content)
        buf = io.BytesIO()
        RomFSWriter.from_directory(tmp, volume_name="plugnet").write(buf)
    return buf.getvalue()


def check_romfs(path):
    from romfs.reader import RomFSReader

    with RomFSReader(path, verify=True) as reader:
        got = {name: reader.read_path(name) for name in FILES}
    assert got == FILES


def check_squashfs(path):
    from PySquashfsImage import SquashFsImage

    with SquashFsImage.from_file(str(path)) as img:
        got = {f.name: f.read_bytes() for f in img if f.is_file}
    assert got == {"hostname": b"wemo\n", "plugd": FILES["plugd"]}, got


IMAGES = {
    "cramfs.img": (make_cramfs, check_cramfs),
    "jffs2.img": (make_jffs2, check_jffs2),
    "ubifs.img": (make_ubifs, check_ubifs),
    "romfs.img": (make_romfs, check_romfs),
}


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    out.mkdir(parents=True, exist_ok=True)
    for name, (make, check) in IMAGES.items():
        path = out / name
        path.write_bytes(make())
        check(path)
        print(f"{name}: {path.stat().st_size} bytes, verified")
    squashfs = out / "squashfs.img"
    if squashfs.exists():
        check_squashfs(squashfs)
        print(f"squashfs.img: {squashfs.stat().st_size} bytes, verified")


if __name__ == "__main__":
    main()
