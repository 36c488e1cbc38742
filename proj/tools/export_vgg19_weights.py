#!/usr/bin/env python3
"""Convert torchvision VGG19 feature weights into a deepcfl backbone archive.

Usage:
    export_vgg19_weights.py OUT.bin                 # torchvision's pretrained VGG19
    export_vgg19_weights.py OUT.bin --state-dict vgg19.pth

Place the result at $DEEPCFL_WEIGHTS_DIR/vgg19_features.bin (or
~/.cache/deepcfl/vgg19_features.bin) or pass it with --backbone.
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"DEEPCFL\n"
VERSION = 1
KIND = "vgg19-features"

# Index of each conv in torchvision's vgg19().features, in network order.
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34]
CONV_NAMES = [f"conv{b}_{k}" for b, n in ((1, 2), (2, 2), (3, 4), (4, 4), (5, 4)) for k in range(1, n + 1)]


def fnv1a(data, h=0xCBF29CE484222325):
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def load_state_dict(path):
    import torch

    if path:
        return torch.load(path, map_location="cpu")
    from torchvision.models import VGG19_Weights, vgg19

    return vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()


def entries(state):
    out = {}
    for idx, name in zip(CONV_INDICES, CONV_NAMES):
        for part in ("weight", "bias"):
            key = f"features.{idx}.{part}"
            if key not in state:
                sys.exit(f"missing {key} in state dict")
            # OIHW flattening matches the conv layer's row-major (out, in*k*k) layout.
            out[f"{name}.{part}"] = np.ascontiguousarray(state[key].detach().cpu().numpy(), dtype="<f4").ravel()
    return out


def serialize(arrays):
    header = json.dumps({"kind": KIND}, separators=(",", ":")).encode()
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<Q", len(header)) + header
    buf += struct.pack("<Q", len(arrays))
    for name in sorted(arrays):
        values = arrays[name]
        encoded = name.encode()
        buf += struct.pack("<B", 0)
        buf += struct.pack("<I", len(encoded)) + encoded
        buf += struct.pack("<Q", values.size) + values.tobytes()
    buf += struct.pack("<Q", fnv1a(buf))
    return bytes(buf)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("output")
    p.add_argument("--state-dict", help="saved torchvision vgg19 state dict (default: download pretrained)")
    args = p.parse_args()
    data = serialize(entries(load_state_dict(args.state_dict)))
    with open(args.output, "wb") as f:
        f.write(data)
    print(f"wrote {args.output} ({len(data)} bytes)")


if __name__ == "__main__":
    main()
