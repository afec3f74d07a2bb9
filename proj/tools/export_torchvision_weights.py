#!/usr/bin/env python3
"""Export torchvision ImageNet weights to the .ecvdw blobs read by the C++ loader.

Writes <out>/<slug>.ecvdw for each requested backbone. Parameter names are
the torchvision state_dict keys; num_batches_tracked entries are dropped.
ShuffleNet v1 has no torchvision implementation and must come from elsewhere.
"""
import argparse
import pathlib
import struct
import sys

MAGIC = b"ECVDW001"

# slug -> (torchvision constructor name, weights enum name)
MODELS = {
    "squeezenet": ("squeezenet1_1", "SqueezeNet1_1_Weights"),
    "mobilenetv2": ("mobilenet_v2", "MobileNet_V2_Weights"),
    "efficientnetb0": ("efficientnet_b0", "EfficientNet_B0_Weights"),
}


def write_blob(path, state_dict):
    entries = [(k, v) for k, v in state_dict.items() if not k.endswith("num_batches_tracked")]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(entries)))
        for name, tensor in entries:
            raw = name.encode()
            t = tensor.detach().to("cpu").float().contiguous()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.dim()))
            f.write(struct.pack(f"<{t.dim()}q", *t.shape))
            f.write(t.numpy().astype("<f4").tobytes())


def build(slug, pretrained):
    import torchvision.models as tvm

    ctor, weights = MODELS[slug]
    w = getattr(tvm, weights).IMAGENET1K_V1 if pretrained else None
    return getattr(tvm, ctor)(weights=w).eval()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="weights", help="output directory")
    ap.add_argument("--models", nargs="+", default=sorted(MODELS), choices=sorted(MODELS))
    ap.add_argument("--random", action="store_true", help="export random initialization (no download)")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for slug in args.models:
        path = out / f"{slug}.ecvdw"
        write_blob(path, build(slug, not args.random).state_dict())
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
