#!/usr/bin/env python3
"""Re-save a PyTorch state dict in the zip container libtorch can read.

Used for the bundled MTCNN weights (facenet-pytorch legacy pickles) and for
user-supplied ImageNet ResNet-50 weights, e.g.

    python3 convert_state_dict.py resnet50-0676ba61.pth resnet50_imagenet.pt
"""
import sys

import torch


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    state = torch.load(sys.argv[1], map_location="cpu")
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    tensors = {k: v.contiguous() for k, v in state.items() if isinstance(v, torch.Tensor)}
    torch.save(tensors, sys.argv[2])
    print(f"wrote {len(tensors)} tensors to {sys.argv[2]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
