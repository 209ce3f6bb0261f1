"""Regenerate crates/core/tests/fixtures/torchvision_mobilenet_v2_features.json.

    cargo run -p maskwatch-core --example dump_reference_io -- /tmp
    python3 scripts/torchvision_reference.py /tmp

Loads the seeded weights into torchvision's MobileNetV2, runs the same input
through its feature extractor plus global average pooling, and stores the
result as the golden output.
"""
import json
import sys

import torch
import torchvision
from safetensors.torch import load_file

src = sys.argv[1] if len(sys.argv) > 1 else "/tmp"
weights = load_file(f"{src}/weights.safetensors")
io = load_file(f"{src}/io.safetensors")
model = torchvision.models.mobilenet_v2(weights=None).eval()
missing, unexpected = model.load_state_dict({k: v for k, v in weights.items() if k.startswith("features.")}, strict=False)
assert not unexpected and all(k.startswith("classifier") for k in missing), (missing, unexpected)
with torch.no_grad():
    feats = model.features(io["x"].permute(0, 3, 1, 2)).mean((2, 3))
print("max abs diff vs maskwatch:", (feats - io["features"]).abs().max().item())
out = "crates/core/tests/fixtures/torchvision_mobilenet_v2_features.json"
with open(out, "w") as f:
    json.dump({"model_seed": 5, "render_seed": 3, "images": 2,
               "features": [[round(float(v), 7) for v in row] for row in feats]}, f)
print("wrote", out)
