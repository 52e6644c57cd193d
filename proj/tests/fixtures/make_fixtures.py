#!/usr/bin/env python3
"""Writes the golden wire fixtures and manifest.txt.

Independent of the C++ code: packets are laid out field by field here and the
checksum is computed from scratch. Rerun only when the wire format changes on
purpose.
"""
import os
import struct

HERE = os.path.dirname(os.path.abspath(__file__))
SRC, DST = 0x0A000001, 0x0A000002


def checksum(buf: bytes) -> int:
    if len(buf) % 2:
        buf += b"\0"
    s = sum(struct.unpack("!%dH" % (len(buf) // 2), buf))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def ip_header(total, proto, ident, src, dst):
    return struct.pack("!BBHHHBBHII", 0x45, 0, total, ident, 0, 64, proto, 0, src, dst)


def seal(pkt: bytearray) -> bytes:
    pkt[10:12] = struct.pack("!H", checksum(bytes(pkt)))
    return bytes(pkt)


def segment(ls):
    return bytes((i * 29 + 7) & 0xFF for i in range(ls))


def nc(tid, bid, sid, ns, typ, start, tail, ls, ip_id):
    hl = 28 if typ == 0 else 29
    body = struct.pack("!BBBBBH", tid, bid, sid, ns, typ, start)
    body += struct.pack("!B", tail) if typ == 0 else struct.pack("!H", tail)
    pkt = bytearray(ip_header(hl + ls, 253, ip_id, SRC, DST) + body + segment(ls))
    return seal(pkt)


def ack(tid, bid):
    pkt = bytearray(ip_header(22, 254, (tid << 8) | bid, DST, SRC) + bytes([tid, bid]))
    return seal(pkt)


CASES = [
    ("sys_default.bin", "nc", dict(tid=0, bid=5, sid=3, ns=120, type=0, start=17, segn=3, ls=187, ip_id=0x0503)),
    ("coded_default.bin", "nc", dict(tid=1, bid=255, sid=130, ns=120, type=1, start=0xFFFF, seed=0x1234, ls=187,
                                     ip_id=0xFF82)),
    ("sys_lm.bin", "nc", dict(tid=2, bid=0, sid=0, ns=129, type=0, start=0, segn=0, ls=1400, ip_id=0)),
    ("coded_lm.bin", "nc", dict(tid=2, bid=0, sid=200, ns=129, type=1, start=0xFFFF, seed=32748, ls=1400,
                                ip_id=0x00C8)),
    ("sys_odd.bin", "nc", dict(tid=7, bid=128, sid=1, ns=4, type=0, start=0xFFFF, segn=1, ls=33, ip_id=0x8001)),
    ("ack_3_7.bin", "ack", dict(tid=3, bid=7)),
]


def main():
    lines = ["# file kind fields (integers; see make_fixtures.py)"]
    for name, kind, f in CASES:
        if kind == "ack":
            data = ack(f["tid"], f["bid"])
        else:
            tail = f["segn"] if f["type"] == 0 else f["seed"]
            data = nc(f["tid"], f["bid"], f["sid"], f["ns"], f["type"], f["start"], tail, f["ls"], f["ip_id"])
        with open(os.path.join(HERE, name), "wb") as out:
            out.write(data)
        lines.append(" ".join([name, kind] + ["%s=%d" % kv for kv in f.items()]))
    with open(os.path.join(HERE, "manifest.txt"), "w") as out:
        out.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
