#!/usr/bin/env python3
"""Regenerates the golden vectors in this directory.

Every byte is assembled here with `struct` from the wire layouts listed in
README.md, independently of the Rust encoders. Run from the repository root:

    python3 vectors/generate.py
"""

import ipaddress
import json
import os
import struct

HERE = os.path.dirname(os.path.abspath(__file__))


def a(s):
    return ipaddress.IPv6Address(s).packed


def ee(s, z, scale, mult):
    return (s << 15) | (z << 14) | (scale << 8) | mult


def sender(seq, sec, frac, ee_bits, ssid, mbz=b"\0" * 28):
    return struct.pack(">IIIHH", seq, sec, frac, ee_bits, ssid) + mbz


def reflector(seq, t3, ee_bits, ssid, t2, sseq, t1, see, ttl, mbz1=b"\0\0", mbz2=b"\0\0\0"):
    return (
        struct.pack(">IIIHH", seq, t3[0], t3[1], ee_bits, ssid)
        + struct.pack(">II", *t2)
        + struct.pack(">I", sseq)
        + struct.pack(">II", *t1)
        + struct.pack(">H", see)
        + mbz1
        + bytes([ttl])
        + mbz2
    )


def srh(next_header, sl, flags, tag, path):
    n = len(path)
    head = struct.pack(">BBBBBBH", next_header, 2 * n, 4, sl, n - 1, flags, tag)
    return head + b"".join(a(s) for s in reversed(path))


def csum(data):
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(">%dH" % (len(data) // 2), data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


def datagram(src, dst, hop, sport, dport, body, path=None, tc=0, flow=0):
    udp_len = 8 + len(body)
    final = path[-1] if path else dst
    pseudo = a(src) + a(final) + struct.pack(">IxxxB", udp_len, 17)
    udp0 = struct.pack(">HHHH", sport, dport, udp_len, 0) + body
    c = csum(pseudo + udp0) or 0xFFFF
    udp = struct.pack(">HHHH", sport, dport, udp_len, c) + body
    ext = srh(17, len(path) - 1, 0, 0, path) if path else b""
    nh = 43 if path else 17
    first = (6 << 28) | (tc << 20) | flow
    ip = struct.pack(">IHBB", first, len(ext) + len(udp), nh, hop) + a(src) + a(dst)
    return ip + ext + udp, c


def hexdump(b):
    return " ".join("%02x" % x for x in b)


def write(name, desc, kind, data, expect=None, error=None):
    v = {"description": desc, "kind": kind, "hex": hexdump(data)}
    if expect is not None:
        v["expect"] = expect
    if error is not None:
        v["error"] = error
    with open(os.path.join(HERE, name + ".json"), "w") as f:
        json.dump(v, f, indent=2)
        f.write("\n")


def sender_fields(seq, sec, frac, ee_bits, ssid, mbz_nonzero=False):
    return {
        "sequence_number": seq,
        "timestamp": [sec, frac],
        "error_estimate_bits": ee_bits,
        "ssid": ssid,
        "mbz_nonzero": mbz_nonzero,
    }


def reflector_fields(seq, t3, ee_bits, ssid, t2, sseq, t1, see, ttl, mbz_nonzero=False):
    return {
        "sequence_number": seq,
        "timestamp": list(t3),
        "error_estimate_bits": ee_bits,
        "ssid": ssid,
        "receive_timestamp": list(t2),
        "sender_sequence_number": sseq,
        "sender_timestamp": list(t1),
        "sender_error_estimate_bits": see,
        "sender_ttl": ttl,
        "mbz_nonzero": mbz_nonzero,
    }


def main():
    e1 = ee(1, 0, 0, 1)
    write(
        "sender_basic",
        "Sender payload, sequence 1, synchronized clock, SSID 42.",
        "sender_payload",
        sender(1, 0xE8E3A1C0, 0x80000000, e1, 42),
        sender_fields(1, 0xE8E3A1C0, 0x80000000, e1, 42),
    )
    write(
        "sender_max_fields",
        "Sender payload with every field at its maximum.",
        "sender_payload",
        sender(0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF, ee(1, 1, 63, 255), 0xFFFF),
        sender_fields(0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF, ee(1, 1, 63, 255), 0xFFFF),
    )
    write(
        "sender_mbz_set",
        "Sender payload with a must-be-zero byte set: decoded and flagged.",
        "sender_payload",
        sender(7, 1, 2, e1, 3, mbz=b"\0" * 27 + b"\x01"),
        sender_fields(7, 1, 2, e1, 3, mbz_nonzero=True),
    )
    write(
        "sender_ssid_zero",
        "Sender payload with SSID 0 is rejected.",
        "sender_payload",
        sender(1, 0, 0, e1, 0),
        error="SsidZero",
    )
    write(
        "sender_truncated",
        "43-byte body is too short.",
        "sender_payload",
        sender(1, 0, 0, e1, 1)[:43],
        error="TooShort",
    )
    t1 = (0xE8E3A1C0, 0x00000000)
    t2 = (0xE8E3A1C0, 0x0147AE14)
    t3 = (0xE8E3A1C0, 0x0151EB85)
    e2 = ee(0, 0, 2, 10)
    write(
        "reflector_basic",
        "Reflector payload answering sequence 5 with TTL 64.",
        "reflector_payload",
        reflector(5, t3, e2, 42, t2, 5, t1, e1, 64),
        reflector_fields(5, t3, e2, 42, t2, 5, t1, e1, 64),
    )
    write(
        "reflector_stateful_ttl255",
        "Stateful reflector: own sequence 0 answering sender sequence 99, TTL 255.",
        "reflector_payload",
        reflector(0, t3, e2, 9, t2, 99, t1, e1, 255),
        reflector_fields(0, t3, e2, 9, t2, 99, t1, e1, 255),
    )
    write(
        "reflector_mbz_set",
        "Reflector payload with the MBZ byte after the echoed error estimate set.",
        "reflector_payload",
        reflector(1, t3, e2, 1, t2, 1, t1, e1, 1, mbz1=b"\0\x80"),
        reflector_fields(1, t3, e2, 1, t2, 1, t1, e1, 1, mbz_nonzero=True),
    )
    path = ["fc00::a", "fc00::b", "fc00::2"]
    write(
        "srh_three_segments",
        "SRH for path fc00::a -> fc00::b -> fc00::2, Segments Left 2.",
        "srh",
        srh(17, 2, 0, 0, path),
        {"next_header": 17, "segments_left": 2, "last_entry": 2, "flags": 0, "tag": 0, "segments": path},
    )
    write(
        "srh_bad_routing_type",
        "Routing type 3 is not an SRH.",
        "srh",
        bytes([17, 2, 3, 0, 0, 0, 0, 0]) + a("fc00::1"),
        error="UnsupportedRoutingType",
    )
    write(
        "srh_segments_left_too_big",
        "Segments Left beyond Last Entry.",
        "srh",
        srh(17, 3, 0, 0, path),
        error="SegmentsLeftOutOfRange",
    )
    body = sender(0, 0xE8E3A1C0, 0, e1, 42)
    dg, c = datagram("fc00::1", "fc00::a", 64, 862, 862, body, path=path)
    write(
        "datagram_sender_srh",
        "Sender test datagram over an SRH; checksum uses the final segment.",
        "datagram_sender",
        dg,
        {
            "src_addr": "fc00::1",
            "dst_addr": "fc00::a",
            "hop_limit": 64,
            "src_port": 862,
            "dst_port": 862,
            "checksum": c,
            "segments": path,
            "segments_left": 2,
            "payload": sender_fields(0, 0xE8E3A1C0, 0, e1, 42),
        },
    )
    rbody = reflector(3, t3, e2, 42, t2, 3, t1, e1, 62)
    dg, c = datagram("fc00::2", "fc00::1", 64, 862, 40001, rbody)
    write(
        "datagram_reflector_plain",
        "Reflector test datagram without SRH to an ephemeral sender port.",
        "datagram_reflector",
        dg,
        {
            "src_addr": "fc00::2",
            "dst_addr": "fc00::1",
            "hop_limit": 64,
            "src_port": 862,
            "dst_port": 40001,
            "checksum": c,
            "segments": [],
            "segments_left": 0,
            "payload": reflector_fields(3, t3, e2, 42, t2, 3, t1, e1, 62),
        },
    )
    bad = bytearray(dg)
    bad[-1] ^= 0x01
    write(
        "datagram_bad_checksum",
        "Reflector datagram with a corrupted payload byte.",
        "datagram_reflector",
        bytes(bad),
        error="ChecksumMismatch",
    )


if __name__ == "__main__":
    main()
