"""Export a detector's feature-pyramid trunk to ONNX for the spotting engine.

The class and box heads of the detector are dropped; only the
backbone-plus-FPN trunk is kept, emitting the three 256-channel maps at
strides 8/16/32 that the engine consumes. Alongside the graph, the script
writes a manifest (input size, normalization, output names, checksum) and a
parity fixture (a fixed input plus expected output slices) so any engine
installation can validate a model file without this toolchain.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torchvision.models.detection.backbone_utils import resnet_fpn_backbone

INPUT_SIZE = 1000
CHANNELS = 256
STRIDES = (8, 16, 32)
OUTPUT_NAMES = ("p3", "p4", "p5")

# ImageNet normalization expressed for raw 0..255 pixel inputs; the engine
# applies (x - mean) / scale before feeding the graph.
PIXEL_MEAN = (123.675, 116.28, 103.53)
PIXEL_SCALE = (58.395, 57.12, 57.375)

FIXTURE_SLICE = (slice(None), slice(0, 8), slice(0, 4), slice(0, 4))


class PyramidTrunk(nn.Module):
    """Backbone + FPN emitting only the P3/P4/P5 maps."""

    def __init__(self, backbone: nn.Module):
        super().__init__()
        self.backbone = backbone

    def forward(self, x):
        features = self.backbone(x)
        return features["0"], features["1"], features["2"]


def build_trunk(depth: str = "resnet50", weights: str | Path | None = None) -> PyramidTrunk:
    """Assemble the trunk; ``weights`` is an optional state-dict file of a
    detector whose backbone matches ``depth`` (heads are ignored)."""
    backbone = resnet_fpn_backbone(
        backbone_name=depth, weights=None, returned_layers=[2, 3, 4]
    )
    trunk = PyramidTrunk(backbone)
    if weights is not None:
        state = torch.load(weights, map_location="cpu", weights_only=True)
        if not isinstance(state, dict):
            raise ValueError(f"unsupported weights file: {weights}")
        trunk_state = {
            key.removeprefix("backbone."): value
            for key, value in state.items()
            if key.startswith("backbone.")
        }
        missing, unexpected = trunk.backbone.load_state_dict(trunk_state, strict=False)
        if missing:
            raise ValueError(f"weights are missing trunk tensors: {missing[:5]} ...")
    trunk.eval()
    return trunk


def check_output_shapes(trunk: PyramidTrunk, input_size: int = INPUT_SIZE) -> None:
    """Abort unless the trunk emits the declared resolutions and depth."""
    with torch.no_grad():
        outputs = trunk(torch.zeros(1, 3, input_size, input_size))
    for name, stride, out in zip(OUTPUT_NAMES, STRIDES, outputs):
        expected = (1, CHANNELS, -(-input_size // stride), -(-input_size // stride))
        if tuple(out.shape) != expected:
            raise ValueError(
                f"{name} has shape {tuple(out.shape)}, expected {expected}"
            )


def fixture_input(input_size: int = INPUT_SIZE) -> np.ndarray:
    """Fixed normalized input used by the parity fixture."""
    rng = np.random.default_rng(20240915)
    return rng.standard_normal((1, 3, input_size, input_size)).astype(np.float32)


def write_parity_fixture(trunk: PyramidTrunk, path: Path, input_size: int = INPUT_SIZE) -> None:
    x = fixture_input(input_size)
    with torch.no_grad():
        outputs = trunk(torch.from_numpy(x))
    arrays = {"input_seed": np.array([20240915]), "input_shape": np.array(x.shape)}
    for name, out in zip(OUTPUT_NAMES, outputs):
        arrays[f"expected_{name}"] = out.numpy()[FIXTURE_SLICE]
    np.savez_compressed(path, **arrays)


def write_manifest(
    path: Path,
    model_file: Path,
    depth: str,
    weights_source: str,
    input_size: int = INPUT_SIZE,
) -> dict:
    manifest = {
        "model": model_file.name,
        "input_size": input_size,
        "mean": list(PIXEL_MEAN),
        "scale": list(PIXEL_SCALE),
        "outputs": [
            {"name": name, "stride": stride, "channels": CHANNELS}
            for name, stride in zip(OUTPUT_NAMES, STRIDES)
        ],
        "backbone": depth,
        "weights_source": weights_source,
        "sha256": hashlib.sha256(model_file.read_bytes()).hexdigest(),
    }
    path.write_text(json.dumps(manifest, indent=1))
    return manifest


def export_onnx(trunk: PyramidTrunk, path: Path, input_size: int = INPUT_SIZE) -> None:
    """Serialize the trunk; any exporter toolchain error surfaces as-is."""
    dummy = torch.zeros(1, 3, input_size, input_size)
    torch.onnx.export(
        trunk,
        (dummy,),
        str(path),
        input_names=["image"],
        output_names=list(OUTPUT_NAMES),
        dynamo=False,
    )


def export(
    out_dir: str | Path,
    depth: str = "resnet50",
    weights: str | Path | None = None,
    input_size: int = INPUT_SIZE,
) -> dict:
    """Full export: shape check, ONNX graph, manifest, parity fixture."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trunk = build_trunk(depth, weights)
    check_output_shapes(trunk, input_size)

    model_file = out_dir / "model.onnx"
    export_onnx(trunk, model_file, input_size)
    write_parity_fixture(trunk, out_dir / "parity_fixture.npz", input_size)
    return write_manifest(
        out_dir / "manifest.json",
        model_file,
        depth,
        weights_source=str(weights) if weights else f"{depth} random init",
        input_size=input_size,
    )


def verify_parity(model_path: str | Path, fixture_path: str | Path, atol: float = 1e-4) -> float:
    """Run the exported graph on the fixture input and compare the recorded
    slices; returns the worst absolute deviation."""
    import onnxruntime as ort

    fixture = np.load(fixture_path)
    input_size = int(fixture["input_shape"][2])
    session = ort.InferenceSession(str(model_path), providers=["CPUExecutionProvider"])
    outputs = session.run(None, {"image": fixture_input(input_size)})
    worst = 0.0
    for name, out in zip(OUTPUT_NAMES, outputs):
        expected = fixture[f"expected_{name}"]
        worst = max(worst, float(np.abs(out[FIXTURE_SLICE] - expected).max()))
    if worst > atol:
        raise AssertionError(f"parity deviation {worst:.2e} exceeds {atol:.0e}")
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--depth", default="resnet50", help="backbone depth")
    parser.add_argument("--weights", default=None, help="detector state-dict file")
    parser.add_argument("--input-size", type=int, default=INPUT_SIZE)
    parser.add_argument(
        "--verify", action="store_true", help="run the parity check after exporting"
    )
    args = parser.parse_args(argv)

    manifest = export(args.out, args.depth, args.weights, args.input_size)
    print(f"exported {manifest['model']} (sha256 {manifest['sha256'][:12]}...)")
    if args.verify:
        worst = verify_parity(
            Path(args.out) / manifest["model"], Path(args.out) / "parity_fixture.npz"
        )
        print(f"parity ok, worst deviation {worst:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
