#!/usr/bin/env python3
"""Generate the SDK conformance corpus from the primary wire codec.

Writes a concatenated binary stream of 1000 randomized messages plus an
index describing each frame (offsets, header fields, payload schema and a
payload digest), and two tiny fixed fixtures.  Deterministic: re-running
must reproduce the committed bytes exactly.
"""

import hashlib
import json
import random
import struct
import sys
from pathlib import Path

from autoframe import wire

SEED = 0xC0FFEE
COUNT = 1000


def random_message(rng):
    k = rng.randrange(8)
    if k == 0:
        return wire.Heartbeat(), "heartbeat", None
    if k == 1:
        return wire.SteeringCommand(rng.uniform(-1.5, 1.5)), "steering", None
    if k == 2:
        return (wire.StateCapture(rng.uniform(0, 40), rng.uniform(-3.14, 3.14),
                                  rng.uniform(-2, 2)), "state", "vehicle_state")
    if k == 3:
        pts = tuple((rng.uniform(0.1, 60), rng.uniform(-15, 15), rng.uniform(-1, 2))
                    for _ in range(rng.randrange(9)))
        return wire.WaypointSet(pts), "waypoints", "waypoints"
    if k == 4:
        pts = tuple((struct.unpack("<f", struct.pack("<f", rng.uniform(0, 320)))[0],
                     struct.unpack("<f", struct.pack("<f", rng.uniform(0, 240)))[0])
                    for _ in range(rng.randrange(9)))
        return wire.LaneCenterSet(pts), "lane_centers", "lane_centers"
    if k == 5:
        w, h = rng.randint(1, 8), rng.randint(1, 8)
        img = wire.ImageCapture.rgb8(w, h, rng.randbytes(w * h * 3))
        return img, "image", "image_rgb"
    if k == 6:
        w, h = rng.randint(1, 6), rng.randint(1, 6)
        img = wire.ImageCapture.depth_f32(w, h, rng.randbytes(w * h * 4))
        if rng.random() < 0.5:
            return img, "image", "image_depth"
        rgb = wire.ImageCapture.rgb8(w, h, rng.randbytes(w * h * 3))
        return wire.DisplayFrame(rgb), "display", None
    doc = json.dumps({"model": f"m{rng.randrange(100)}", "n": rng.randrange(1000)})
    return wire.ConfigPush.from_document(doc), "config_push", None


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)

    blob = bytearray()
    index = []
    for i in range(COUNT):
        payload, kind, topic = random_message(rng)
        msg = wire.Message.of(payload, rng.randrange(1 << 16), rng.randrange(1 << 64))
        data = wire.encode_message(msg)
        index.append({
            "offset": len(blob),
            "length": len(data),
            "msg_type": int(msg.msg_type),
            "stream_id": msg.stream_id,
            "timestamp_us": str(msg.timestamp_us),
            "payload_kind": kind,
            "topic": topic,
            "payload_sha256": hashlib.sha256(data[wire.HEADER_SIZE:]).hexdigest(),
        })
        blob += data

    (out / "corpus.bin").write_bytes(bytes(blob))
    (out / "corpus.json").write_text(json.dumps(
        {"count": COUNT, "seed": SEED, "messages": index}, indent=1) + "\n")

    heartbeat = wire.encode_message(wire.Message.of(wire.Heartbeat(), 0, 0))
    assert len(heartbeat) == 20
    (out / "heartbeat.bin").write_bytes(heartbeat)
    rgb = wire.encode_message(wire.Message.of(
        wire.ImageCapture.rgb8(2, 2, bytes(range(12))), 7, 1_000_000))
    assert len(rgb) == 42
    (out / "rgb_2x2.bin").write_bytes(rgb)
    print(f"wrote {len(blob)} corpus bytes and fixtures to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "sdk/conformance")
