"""Regenerate the frozen test fixtures under tests/data/.

Expected values come from the independent reference implementations in
canny_reference.py (never from the package code under test), except for
the wire-envelope fixture, which freezes the documented protocol bytes.

Run from the repository root:  python3 tests/make_golden.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

from canny_reference import ref_canny  # noqa: E402

DATA = HERE / "data"


def structured_images() -> list[np.ndarray]:
    flat = np.full((64, 64), 128, dtype=np.uint8)
    vstep = np.zeros((64, 64), dtype=np.uint8)
    vstep[:, 32:] = 255
    hstep = np.zeros((64, 64), dtype=np.uint8)
    hstep[32:, :] = 255
    yy, xx = np.mgrid[0:64, 0:64]
    disk = np.where((yy - 32) ** 2 + (xx - 32) ** 2 <= 18**2, 200, 30).astype(np.uint8)
    diag = np.where(xx + yy >= 64, 220, 40).astype(np.uint8)
    return [flat, vstep, hstep, disk, diag]


def main() -> None:
    DATA.mkdir(exist_ok=True)

    rng = np.random.default_rng(2024)
    images = [rng.integers(0, 256, size=(64, 64), dtype=np.uint8) for _ in range(50)]
    images.extend(structured_images())
    arrays = {}
    for i, img in enumerate(images):
        arrays[f"img_{i:03d}"] = img
        arrays[f"edges_{i:03d}"] = ref_canny(img)
    np.savez_compressed(DATA / "canny_golden.npz", **arrays)
    print(f"canny_golden.npz: {len(images)} cases")

    # hue table: instruction -> tint hue used by the mock compositor
    import hashlib

    instructions = [
        "stack the red block on the bowl",
        "stack the red block on the bowl quickly",
        "place the cup",
        "place the mug",
        "fold the towel",
        "",
    ]
    hues = {s: int.from_bytes(hashlib.sha256(s.encode("utf-8")).digest()[:4], "big") % 360 for s in instructions}
    (DATA / "hue_golden.json").write_text(json.dumps(hues, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print("hue_golden.json:", hues)

    # wire-envelope fixture: a tiny deterministic request, its canonical
    # bytes, and the derived job id
    from demoforge.augment import GenerationRequest, RecipeKind
    from demoforge.genclient import canonical_json, encode_envelope, envelope_job_id

    yy, xx = np.mgrid[0:8, 0:8]
    edge0 = np.where((xx == 3), 255, 0).astype(np.uint8)
    edge1 = np.where((yy == 5), 255, 0).astype(np.uint8)
    ref = np.zeros((8, 8, 3), dtype=np.uint8)
    ref[..., 0] = (xx * 32).astype(np.uint8)
    ref[..., 1] = (yy * 32).astype(np.uint8)
    ref[..., 2] = 7
    request = GenerationRequest(
        control_frames=[edge0, edge1],
        fps=5.0,
        reference_image=ref,
        instruction="place the cup",
        seed=11,
        recipe=RecipeKind.OBJECT_POSE,
        provenance={"source_episode": "demo_000", "scene_seed": 3},
    )
    env = encode_envelope(request)
    (DATA / "golden_envelope.json").write_bytes(canonical_json(env))
    (DATA / "golden_envelope_meta.json").write_text(
        json.dumps({"job_id": envelope_job_id(env)}, indent=2) + "\n", encoding="utf-8"
    )
    print("golden_envelope.json:", envelope_job_id(env))


if __name__ == "__main__":
    main()
