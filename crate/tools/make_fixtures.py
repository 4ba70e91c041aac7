"""Regenerates the checked-in test bundles under crates/core/tests/fixtures.

Trains a small seeded CNN on a synthetic colour-patch dataset, then writes one
explanation bundle per selected test image. Run from the repository root:

    python3 tools/make_fixtures.py [--out crates/core/tests/fixtures] [--bundles 24]

Requires torch, numpy, Pillow and onnx.
"""

import argparse
import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as tf
from PIL import Image

SIZE = 32
PATCH = 10
CLASSES = 10
OPSET = 13
MEAN = [0.485, 0.456, 0.406]
STD = [0.229, 0.224, 0.225]
PALETTE = np.array(
    [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [250, 250, 250],
        [10, 10, 10],
    ],
    dtype=np.float64,
)


def make_image(rng, label):
    img = rng.normal(118.0, 18.0, size=(SIZE, SIZE, 3))
    # a neutral distractor blob so the class patch is not the only structure
    dy, dx = rng.integers(0, SIZE - 6, size=2)
    img[dy : dy + 6, dx : dx + 6, :] += rng.normal(0.0, 30.0)
    y, x = rng.integers(0, SIZE - PATCH, size=2)
    patch = PALETTE[label] + rng.normal(0.0, 12.0, size=(PATCH, PATCH, 3))
    img[y : y + PATCH, x : x + PATCH, :] = patch
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def normalize(batch_u8):
    x = torch.from_numpy(batch_u8).float().div(255.0).permute(0, 3, 1, 2)
    mean = torch.tensor(MEAN).view(1, 3, 1, 1)
    std = torch.tensor(STD).view(1, 3, 1, 1)
    return (x - mean) / std


class Backbone(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)

    def forward(self, x):
        x = tf.max_pool2d(tf.relu(self.conv1(x)), 2)
        return tf.max_pool2d(tf.relu(self.conv2(x)), 2)


class Head(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv3 = nn.Conv2d(16, 16, 3, padding=1)
        self.fc = nn.Linear(16, CLASSES)

    def forward(self, f):
        f = tf.relu(self.conv3(f))
        f = f.mean(dim=(2, 3))
        return self.fc(f)


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        self.backbone = Backbone()
        self.head = Head()

    def forward(self, x):
        return self.head(self.backbone(x))


def export(module, example, path, input_name, output_name):
    torch.onnx.export(
        module,
        (example,),
        str(path),
        input_names=[input_name],
        output_names=[output_name],
        opset_version=OPSET,
        dynamo=False,
    )


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="crates/core/tests/fixtures")
    ap.add_argument("--bundles", type=int, default=24)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)
    rng = np.random.default_rng(args.seed)

    n_train, n_test = 4000, 400
    labels = rng.integers(0, CLASSES, size=n_train + n_test)
    images = np.stack([make_image(rng, int(l)) for l in labels])
    x_all = normalize(images)
    y_all = torch.from_numpy(labels).long()
    x_tr, y_tr = x_all[:n_train], y_all[:n_train]
    x_te, y_te = x_all[n_train:], y_all[n_train:]

    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    for epoch in range(8):
        perm = torch.randperm(n_train)
        for i in range(0, n_train, 64):
            idx = perm[i : i + 64]
            opt.zero_grad()
            loss = tf.cross_entropy(net(x_tr[idx]), y_tr[idx], label_smoothing=0.2)
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        acc = (net(x_te).argmax(1) == y_te).float().mean().item()
    print(f"synthetic test accuracy: {acc:.4f}")
    assert acc >= 0.9, "fixture model failed to train"

    out = Path(args.out)
    bundles_dir = out / "bundles"
    if bundles_dir.exists():
        shutil.rmtree(bundles_dir)
    bundles_dir.mkdir(parents=True)

    graphs = out / "graphs"
    graphs.mkdir(exist_ok=True)
    probe = torch.zeros(1, 3, SIZE, SIZE)
    feat_probe = net.backbone(probe).detach()
    export(net, probe, graphs / "full.onnx", "input", "logits")
    export(net.backbone, probe, graphs / "backbone.onnx", "input", "features")
    export(net.head, feat_probe, graphs / "head.onnx", "features", "logits")
    zeroed = Head()
    with torch.no_grad():
        for p in zeroed.parameters():
            p.zero_()
    export(zeroed, feat_probe, graphs / "head_zeroed.onnx", "features", "logits")

    written = 0
    for i in range(n_test):
        if written == args.bundles:
            break
        img_u8 = images[n_train + i]
        x = normalize(img_u8[None])
        with torch.no_grad():
            logits = net(x)[0]
        cls = int(logits.argmax())
        if cls != int(y_te[i]):
            continue
        prob = torch.softmax(logits.double(), 0)[cls].item()

        feats = net.backbone(x).detach().requires_grad_(True)
        score = net.head(feats)[0, cls]
        (g1,) = torch.autograd.grad(score, feats)
        f_hwc = feats.detach()[0].permute(1, 2, 0).contiguous().numpy().astype(np.float32)
        g1_hwc = g1[0].permute(1, 2, 0).contiguous().numpy().astype(np.float32)
        g2 = (g1_hwc * g1_hwc).astype(np.float32)
        g3 = (g2 * g1_hwc).astype(np.float32)

        bdir = bundles_dir / f"bundle_{written:03d}"
        bdir.mkdir()
        Image.fromarray(img_u8, mode="RGB").save(bdir / "image.png")
        np.save(bdir / "F.npy", f_hwc)
        np.save(bdir / "g1.npy", g1_hwc)
        np.save(bdir / "g2.npy", g2)
        np.save(bdir / "g3.npy", g3)
        for name in ("full", "backbone", "head"):
            shutil.copyfile(graphs / f"{name}.onnx", bdir / f"{name}.onnx")
        manifest = {
            "version": "cfcam-bundle/1",
            "class_index": cls,
            "class_score": float(score.item()),
            "gradient_target": "logit",
            "target_layer": "backbone.conv2",
            "opset": OPSET,
            "normalization": {"mean": MEAN, "std": STD},
            "image": "image.png",
            "tensors": {"features": "F.npy", "g1": "g1.npy", "g2": "g2.npy", "g3": "g3.npy"},
            "graphs": {"full": "full.onnx", "backbone": "backbone.onnx", "head": "head.onnx"},
            "parity": {
                "class_probability": prob,
                "logits": [float(v) for v in logits.tolist()],
            },
        }
        (bdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        written += 1

    print(f"wrote {written} bundles; full.onnx sha256 {sha(graphs / 'full.onnx')}")


if __name__ == "__main__":
    main()
