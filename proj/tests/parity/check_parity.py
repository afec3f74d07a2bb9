#!/usr/bin/env python3
"""Logit parity between the C++ backbones and torchvision.

Each torchvision model gets seeded random weights with perturbed batch-norm
statistics, is exported through tools/export_torchvision_weights.py, and is
evaluated by the C++ probe on the same inputs. Exits 77 when torch or
torchvision is unavailable.
"""
import argparse
import importlib.util
import pathlib
import subprocess
import sys

# Worst-case logit difference relative to the largest reference logit.
REL_TOL = 1e-4
BATCH = 2


def load_exporter():
    path = pathlib.Path(__file__).resolve().parents[2] / "tools" / "export_torchvision_weights.py"
    spec = importlib.util.spec_from_file_location("exporter", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--probe", required=True)
    ap.add_argument("--work", required=True)
    args = ap.parse_args()
    try:
        import torch
        import torchvision  # noqa: F401
    except ImportError:
        print("SKIP: torch/torchvision not installed")
        return 77

    exporter = load_exporter()
    work = pathlib.Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    x = torch.randn(BATCH, 3, 224, 224)
    (work / "input.f32").write_bytes(x.numpy().astype("<f4").tobytes())

    failed = False
    for slug in sorted(exporter.MODELS):
        model = exporter.build(slug, pretrained=False)
        with torch.no_grad():
            for m in model.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.normal_(0, 0.1)
                    m.running_var.uniform_(0.5, 2.0)
                    m.weight.uniform_(0.5, 1.5)
                    m.bias.normal_(0, 0.1)
            ref = model(x).numpy()
        exporter.write_blob(work / f"{slug}.ecvdw", model.state_dict())
        out = work / f"{slug}.out.f32"
        subprocess.run([args.probe, slug, str(work), str(work / "input.f32"), str(BATCH), str(out)], check=True)
        got = torch.frombuffer(bytearray(out.read_bytes()), dtype=torch.float32).reshape(ref.shape).numpy()
        err = float(abs(got - ref).max() / max(abs(ref).max(), 1e-12))
        ok = err <= REL_TOL
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {slug}: max relative logit error {err:.2e} (tol {REL_TOL:.0e})")
    print("ShuffleNet v1 has no torchvision counterpart; not compared")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
