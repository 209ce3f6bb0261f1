"""Export ImageNet-pretrained MobileNetV2 backbone weights for `--backbone-weights`.

    python3 scripts/export_torchvision_backbone.py mobilenet_v2_imagenet.safetensors

Tensor names already match the maskwatch backbone (`features.*`), so the
export is a filtered state dict. Needs network access for the download.
"""
import sys

import torchvision
from safetensors.torch import save_file

out = sys.argv[1] if len(sys.argv) > 1 else "mobilenet_v2_imagenet.safetensors"
model = torchvision.models.mobilenet_v2(weights=torchvision.models.MobileNet_V2_Weights.IMAGENET1K_V1)
state = {k: v.contiguous() for k, v in model.state_dict().items() if k.startswith("features.")}
save_file(state, out)
print(f"wrote {len(state)} tensors to {out}")
