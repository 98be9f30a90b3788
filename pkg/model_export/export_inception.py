"""Export Inception-V3 with three named tap outputs to a TorchScript file.

One-shot companion tool for the cfid package. It produces, in one output
directory:

* ``inception_v3_taps.pt``   - TorchScript module: input (N, 3, 299, 299)
  float32 in [-1, 1], output a dict with keys MaxPool1 / MaxPool2 / AvgPool.
* ``manifest.json``          - sidecar contract consumed by cfid at load
  time: extractor_id (SHA-256 of the model bytes), the level table, the
  preprocessing contract, and golden checksums.
* ``reference.png``          - deterministic self-test input.
* ``golden.json`` + ``golden_activations.npz`` - per-level activations of
  the in-framework model on the reference image, recorded at export time.

Tap binding (documented here because the names alone do not pin graph
nodes): MaxPool1 is the 3x3/2 max pool after Conv2d_2b_3x3 (64x73x73);
MaxPool2 is the 3x3/2 max pool after Conv2d_4a_3x3 (192x35x35); AvgPool is
the global average pool after Mixed_7c (2048x1x1). Preprocessing is NOT
baked into the graph; callers feed [-1, 1] tensors per the manifest.

The export self-tests before writing the manifest: the reference image is
pushed through the in-framework module and the exported file, and any
per-element disagreement above 1e-4 aborts the export. Re-running with the
same weights reproduces the same file bytes, hence the same extractor_id.

Byte reproducibility caveat: torch.jit.save output depends on Python's
per-process hash randomization (set/dict iteration order leaks into the
archive). The CLI therefore pins PYTHONHASHSEED=0 by re-exec before doing
anything else, making its output canonical. Library callers of ``export``
get deterministic bytes within one process unconditionally, but should pin
PYTHONHASHSEED themselves if they need equality across processes.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Dict

import numpy as np
import torch
import torchvision
from PIL import Image

MODEL_FILENAME = "inception_v3_taps.pt"
REFERENCE_FILENAME = "reference.png"
REFERENCE_SEED = 20240816
SELF_TEST_TOLERANCE = 1e-4

LEVELS = (
    {"name": "MaxPool1", "channels": 64, "height": 73, "width": 73},
    {"name": "MaxPool2", "channels": 192, "height": 35, "width": 35},
    {"name": "AvgPool", "channels": 2048, "height": 1, "width": 1},
)

PREPROCESSING_CONTRACT = (
    "input in [-1,1], 299x299, channel-major: float32 (N,3,299,299), v = pixel/127.5 - 1"
)


class ExportMismatch(Exception):
    """Self-test disagreement between in-framework and exported outputs."""


class WeightsUnavailable(Exception):
    """The requested weights could not be loaded (e.g. no network access)."""


class InceptionTaps(torch.nn.Module):
    """Inception-V3 truncated to the three tapped pooling outputs.

    Holds the stem and Mixed blocks of a torchvision Inception-V3 and
    re-runs its forward graph up to the global average pool, returning the
    three pooled activations instead of logits. Dropout and the classifier
    head are omitted, so eval-mode outputs are deterministic.
    """

    def __init__(self, net: torch.nn.Module):
        super().__init__()
        self.Conv2d_1a_3x3 = net.Conv2d_1a_3x3
        self.Conv2d_2a_3x3 = net.Conv2d_2a_3x3
        self.Conv2d_2b_3x3 = net.Conv2d_2b_3x3
        self.maxpool1 = net.maxpool1
        self.Conv2d_3b_1x1 = net.Conv2d_3b_1x1
        self.Conv2d_4a_3x3 = net.Conv2d_4a_3x3
        self.maxpool2 = net.maxpool2
        self.Mixed_5b = net.Mixed_5b
        self.Mixed_5c = net.Mixed_5c
        self.Mixed_5d = net.Mixed_5d
        self.Mixed_6a = net.Mixed_6a
        self.Mixed_6b = net.Mixed_6b
        self.Mixed_6c = net.Mixed_6c
        self.Mixed_6d = net.Mixed_6d
        self.Mixed_6e = net.Mixed_6e
        self.Mixed_7a = net.Mixed_7a
        self.Mixed_7b = net.Mixed_7b
        self.Mixed_7c = net.Mixed_7c
        self.avgpool = net.avgpool

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        x = self.Conv2d_1a_3x3(x)
        x = self.Conv2d_2a_3x3(x)
        x = self.Conv2d_2b_3x3(x)
        p1 = self.maxpool1(x)
        x = self.Conv2d_3b_1x1(p1)
        x = self.Conv2d_4a_3x3(x)
        p2 = self.maxpool2(x)
        x = self.Mixed_5b(p2)
        x = self.Mixed_5c(x)
        x = self.Mixed_5d(x)
        x = self.Mixed_6a(x)
        x = self.Mixed_6b(x)
        x = self.Mixed_6c(x)
        x = self.Mixed_6d(x)
        x = self.Mixed_6e(x)
        x = self.Mixed_7a(x)
        x = self.Mixed_7b(x)
        x = self.Mixed_7c(x)
        p3 = self.avgpool(x)
        return {"MaxPool1": p1, "MaxPool2": p2, "AvgPool": p3}


def build_tap_model(weights: str, seed: int) -> tuple:
    """Construct the tap module; returns (module, provenance dict)."""
    if weights == "pretrained":
        try:
            tag = torchvision.models.Inception_V3_Weights.IMAGENET1K_V1
            net = torchvision.models.inception_v3(weights=tag)
        except Exception as e:
            raise WeightsUnavailable(
                f"could not fetch pretrained weights ({e}); pass --weights random "
                "or --weights PATH_TO_STATE_DICT"
            )
        provenance = {"mode": "pretrained", "detail": str(tag)}
    elif weights == "random":
        torch.manual_seed(seed)
        net = torchvision.models.inception_v3(weights=None, aux_logits=True, init_weights=True)
        provenance = {"mode": "random", "seed": seed, "detail": f"torch.manual_seed({seed})"}
    else:
        path = Path(weights)
        if not path.is_file():
            raise WeightsUnavailable(f"{path}: weights file not found")
        net = torchvision.models.inception_v3(weights=None, aux_logits=True, init_weights=False)
        state = torch.load(path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        provenance = {
            "mode": "file",
            "detail": str(path),
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        }
    net.eval()
    return InceptionTaps(net).eval(), provenance


def make_reference_image(path: Path) -> np.ndarray:
    """Deterministic 299x299 RGB noise raster; written as PNG, returned as array."""
    g = np.random.Generator(np.random.Philox(key=REFERENCE_SEED))
    arr = g.integers(0, 256, size=(299, 299, 3)).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")
    return arr


def preprocess(pixels: np.ndarray) -> torch.Tensor:
    """The manifest's contract: [-1, 1] float32, channel-major, batch of 1."""
    x = pixels.astype(np.float32) / 127.5 - 1.0
    return torch.from_numpy(x.transpose(2, 0, 1)[None, :, :, :])


def _forward(module, batch: torch.Tensor) -> dict:
    with torch.no_grad():
        out = module(batch)
    return {name: tensor.numpy() for name, tensor in out.items()}


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _level_record(framework: np.ndarray, exported: np.ndarray) -> dict:
    diff = float(np.max(np.abs(framework.astype(np.float64) - exported.astype(np.float64))))
    flat = exported.reshape(-1)
    return {
        "shape": list(framework.shape[1:]),
        "framework_sha256": _sha256_bytes(np.ascontiguousarray(framework).tobytes()),
        "exported_sha256": _sha256_bytes(np.ascontiguousarray(exported).tobytes()),
        "mean": float(flat.mean()),
        "std": float(flat.std()),
        "first8": [float(v) for v in flat[:8]],
        "max_abs_diff": diff,
    }


def export(out_dir, weights: str = "random", seed: int = REFERENCE_SEED) -> dict:
    """Run the full export + self-test; returns the manifest dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    module, provenance = build_tap_model(weights, seed)

    reference = make_reference_image(out_dir / REFERENCE_FILENAME)
    batch = preprocess(reference)
    framework_acts = _forward(module, batch)
    for level in LEVELS:
        got = framework_acts[level["name"]].shape[1:]
        want = (level["channels"], level["height"], level["width"])
        if tuple(got) != want:
            raise ExportMismatch(f"tap {level['name']}: shape {tuple(got)}, expected {want}")

    model_path = out_dir / MODEL_FILENAME
    scripted = torch.jit.script(module)
    torch.jit.save(scripted, str(model_path))

    loaded = torch.jit.load(str(model_path), map_location="cpu")
    loaded.eval()
    exported_acts = _forward(loaded, batch)

    levels_report = {}
    worst = 0.0
    for level in LEVELS:
        name = level["name"]
        record = _level_record(framework_acts[name], exported_acts[name])
        levels_report[name] = record
        worst = max(worst, record["max_abs_diff"])
    if worst > SELF_TEST_TOLERANCE:
        raise ExportMismatch(
            f"self-test failed: max |framework - exported| = {worst:g} "
            f"exceeds {SELF_TEST_TOLERANCE:g}"
        )

    model_bytes = model_path.read_bytes()
    extractor_id = _sha256_bytes(model_bytes)
    image_sha = _sha256_bytes((out_dir / REFERENCE_FILENAME).read_bytes())

    manifest = {
        "format_version": 1,
        "extractor_id": extractor_id,
        "model_file": MODEL_FILENAME,
        "levels": [dict(level) for level in LEVELS],
        "preprocessing": PREPROCESSING_CONTRACT,
        "weights": provenance,
        "environment": {
            "torch": torch.__version__,
            "torchvision": torchvision.__version__,
        },
        "golden": {
            "image": REFERENCE_FILENAME,
            "image_sha256": image_sha,
            "activation_sha256": {
                name: record["exported_sha256"] for name, record in levels_report.items()
            },
            "max_abs_diff": worst,
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    golden = {
        "reference_image": REFERENCE_FILENAME,
        "image_sha256": image_sha,
        "extractor_id": extractor_id,
        "levels": levels_report,
        "max_abs_diff": worst,
    }
    (out_dir / "golden.json").write_text(json.dumps(golden, indent=2) + "\n")
    np.savez(
        out_dir / "golden_activations.npz",
        **{name: framework_acts[name] for name in (lv["name"] for lv in LEVELS)},
    )
    return manifest


def self_test(out_dir) -> dict:
    """Re-run the exported model on the reference image and compare against
    the in-framework activations recorded at export time.

    Returns per-level diffs and checksum matches; raises ExportMismatch only
    for structural problems (missing or substituted files).
    """
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    golden = json.loads((out_dir / "golden.json").read_text())
    image_path = out_dir / golden["reference_image"]
    if not image_path.is_file():
        raise ExportMismatch(f"{image_path}: reference image missing")
    if _sha256_bytes(image_path.read_bytes()) != golden["image_sha256"]:
        raise ExportMismatch(f"{image_path}: reference image bytes changed since export")
    model_path = out_dir / manifest["model_file"]
    if _sha256_bytes(model_path.read_bytes()) != manifest["extractor_id"]:
        raise ExportMismatch(f"{model_path}: model bytes do not match manifest extractor_id")

    pixels = np.asarray(Image.open(image_path).convert("RGB"))
    loaded = torch.jit.load(str(model_path), map_location="cpu")
    loaded.eval()
    acts = _forward(loaded, preprocess(pixels))

    recorded = np.load(out_dir / "golden_activations.npz")
    report = {"levels": {}, "max_abs_diff": 0.0}
    for name, record in golden["levels"].items():
        current = acts[name]
        diff = float(np.max(np.abs(current.astype(np.float64) - recorded[name].astype(np.float64))))
        checksum_match = _sha256_bytes(np.ascontiguousarray(current).tobytes()) == record[
            "exported_sha256"
        ]
        report["levels"][name] = {"max_abs_diff": diff, "checksum_match": checksum_match}
        report["max_abs_diff"] = max(report["max_abs_diff"], diff)
    return report


def _pin_hash_seed() -> None:
    """Re-exec with PYTHONHASHSEED=0 so torch.jit.save bytes are canonical."""
    if os.environ.get("PYTHONHASHSEED") == "0":
        return
    env = dict(os.environ, PYTHONHASHSEED="0")
    os.execve(sys.executable, [sys.executable] + sys.argv, env)


def main(argv=None) -> int:
    if argv is None:
        _pin_hash_seed()
    parser = argparse.ArgumentParser(
        description="Export Inception-V3 with MaxPool1/MaxPool2/AvgPool taps for cfid."
    )
    parser.add_argument("--out", default="dist", help="output directory (default: dist)")
    parser.add_argument(
        "--weights",
        default="pretrained",
        help="'pretrained', 'random', or a path to a state-dict file (default: pretrained)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=REFERENCE_SEED,
        help="torch seed for --weights random (default: %(default)s)",
    )
    parser.add_argument(
        "--self-test-only",
        action="store_true",
        help="skip exporting; verify an existing export in --out",
    )
    args = parser.parse_args(argv)

    try:
        if args.self_test_only:
            report = self_test(args.out)
            for name, rec in report["levels"].items():
                print(
                    f"{name}: max_abs_diff={rec['max_abs_diff']:g} "
                    f"checksum_match={rec['checksum_match']}"
                )
            ok = report["max_abs_diff"] <= SELF_TEST_TOLERANCE
            print(f"self-test {'PASSED' if ok else 'FAILED'}: max_abs_diff={report['max_abs_diff']:g}")
            return 0 if ok else 1
        manifest = export(args.out, weights=args.weights, seed=args.seed)
    except (ExportMismatch, WeightsUnavailable) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"exported {manifest['model_file']} (extractor_id={manifest['extractor_id'][:16]}...)")
    for level in manifest["levels"]:
        print(f"  {level['name']}: {level['channels']}x{level['height']}x{level['width']}")
    print(f"self-test max_abs_diff={manifest['golden']['max_abs_diff']:g}")
    print(f"weights: {manifest['weights']['mode']} ({manifest['weights']['detail']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
