"""Writes a golden fake-mode request/response pair for the SDS wire protocol.

Usage: python3 make_sds_fixture.py [output_dir]
"""

import math
import struct
import sys
from pathlib import Path

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def fake_prediction(request: bytes, count: int) -> list:
    seed = fnv1a64(request)

    def unit(k):
        return (mix64((seed + k * GOLDEN) & MASK) >> 11) / float(1 << 53)

    out = []
    for i in range(count):
        u1, u2 = unit(2 * i + 1), unit(2 * i + 2)
        out.append(math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2))
    return out


def request_bytes(timestep, scale, channels, height, width, prompt, z_t, cond):
    p = prompt.encode()
    head = b"SKLF-SDS1" + struct.pack("<HIfHHHH", 1, timestep, scale, channels, height, width, len(p))
    return head + p + struct.pack(f"<{len(z_t)}f", *z_t) + bytes(cond)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    c, h, w = 4, 3, 5
    z_t = [((k * 37) % 23 - 11) / 8.0 for k in range(c * h * w)]
    cond = [(k * 53) % 256 for k in range(3 * h * w)]
    req = request_bytes(417, 7.5, c, h, w, "a dancing figure", z_t, cond)
    eps = fake_prediction(req, c * h * w)
    resp = b"SKLF-SDS1" + struct.pack("<H", 0) + struct.pack(f"<{len(eps)}f", *eps)
    (out / "sds_fake_request.bin").write_bytes(req)
    (out / "sds_fake_response.bin").write_bytes(resp)


if __name__ == "__main__":
    main()
