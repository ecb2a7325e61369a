#!/usr/bin/env python3
"""Write a BKD1 file of seeded random unit vectors: make_bkd1_fixture.py OUT N_PER_IMAGE ID..."""
import math, random, struct, sys

out, per_image, ids = sys.argv[1], int(sys.argv[2]), sys.argv[3:]
rng = random.Random(7)
records = []
for image_id in sorted(ids):
    for index in range(per_image):
        v = [rng.gauss(0.0, 1.0) for _ in range(128)]
        n = math.sqrt(sum(x * x for x in v))
        records.append((image_id, index, [x / n for x in v]))
with open(out, "wb") as f:
    f.write(b"BKD1" + struct.pack("<IIQ", 1, 128, len(records)))
    for image_id, index, v in records:
        raw = image_id.encode("utf-8")
        f.write(struct.pack("<H", len(raw)) + raw + struct.pack("<I", index))
        f.write(struct.pack("<128f", *v))
