#!/usr/bin/env python3
"""Import a random timm-layout ViT, then check glstr's attention against numpy.

usage: import_vit_check.py GLSTR_BINARY
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import cv2
import numpy as np
from scipy.special import erf

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tools"))
import import_vit  # noqa: E402

C, P, HEADS, HIDDEN, LAYERS, SIZE = 16, 16, 2, 64, 12, 32


def random_timm(rng):
    sd = {
        "cls_token": rng.normal(size=(1, 1, C)),
        "pos_embed": rng.normal(scale=0.5, size=(1, 1 + (SIZE // P) ** 2, C)),
        "patch_embed.proj.weight": rng.normal(scale=0.05, size=(C, 3, P, P)),
        "patch_embed.proj.bias": rng.normal(scale=0.1, size=C),
        "head.weight": rng.normal(size=(10, C)),
    }
    for i in range(LAYERS):
        b = f"blocks.{i}."
        sd[b + "norm1.weight"] = rng.uniform(0.5, 1.5, C)
        sd[b + "norm1.bias"] = rng.normal(scale=0.1, size=C)
        sd[b + "attn.qkv.weight"] = rng.normal(scale=0.4, size=(3 * C, C))
        sd[b + "attn.qkv.bias"] = rng.normal(scale=0.1, size=3 * C)
        sd[b + "attn.proj.weight"] = rng.normal(scale=0.2, size=(C, C))
        sd[b + "attn.proj.bias"] = rng.normal(scale=0.1, size=C)
        sd[b + "norm2.weight"] = rng.uniform(0.5, 1.5, C)
        sd[b + "norm2.bias"] = rng.normal(scale=0.1, size=C)
        sd[b + "mlp.fc1.weight"] = rng.normal(scale=0.2, size=(HIDDEN, C))
        sd[b + "mlp.fc1.bias"] = rng.normal(scale=0.1, size=HIDDEN)
        sd[b + "mlp.fc2.weight"] = rng.normal(scale=0.2, size=(C, HIDDEN))
        sd[b + "mlp.fc2.bias"] = rng.normal(scale=0.1, size=C)
    return sd


def ln(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-6) * g + b


def reference_attention(sd, rgb):
    """Per-layer head-averaged attention, timm block maths without the class token."""
    x = (rgb / 255.0 - 0.5) / 0.5
    g = SIZE // P
    w, bias = sd["patch_embed.proj.weight"], sd["patch_embed.proj.bias"]
    tokens = np.stack([
        np.einsum("cipq,pqi->c", w, x[r * P:(r + 1) * P, s * P:(s + 1) * P]) + bias
        for r in range(g) for s in range(g)
    ])
    h = tokens + sd["pos_embed"][0, 1:]
    d = C // HEADS
    maps = []
    for i in range(LAYERS):
        b = f"blocks.{i}."
        y = ln(h, sd[b + "norm1.weight"], sd[b + "norm1.bias"])
        qkv = y @ sd[b + "attn.qkv.weight"].T + sd[b + "attn.qkv.bias"]
        q, k, v = qkv[:, :C], qkv[:, C:2 * C], qkv[:, 2 * C:]
        heads, probs = [], []
        for m in range(HEADS):
            s = q[:, m * d:(m + 1) * d] @ k[:, m * d:(m + 1) * d].T / np.sqrt(d)
            a = np.exp(s - s.max(-1, keepdims=True))
            a /= a.sum(-1, keepdims=True)
            probs.append(a)
            heads.append(a @ v[:, m * d:(m + 1) * d])
        maps.append(np.mean(probs, axis=0))
        h = h + np.concatenate(heads, -1) @ sd[b + "attn.proj.weight"].T + sd[b + "attn.proj.bias"]
        y = ln(h, sd[b + "norm2.weight"], sd[b + "norm2.bias"]) @ sd[b + "mlp.fc1.weight"].T + sd[b + "mlp.fc1.bias"]
        y = 0.5 * y * (1 + erf(y / np.sqrt(2)))
        h = h + y @ sd[b + "mlp.fc2.weight"].T + sd[b + "mlp.fc2.bias"]
    return maps


def main():
    glstr = sys.argv[1]
    rng = np.random.default_rng(7)
    sd = random_timm(rng)
    failures = 0

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        np.savez(tmp / "vit.npz", **sd)
        subprocess.run([sys.executable, str(ROOT / "tools" / "import_vit.py"), str(tmp / "vit.npz"), "-o",
                        str(tmp / "vit.ckpt")], check=True)
        meta, arrays = import_vit.read_checkpoint(tmp / "vit.ckpt")
        expected = 3 + 16 * LAYERS
        if len(arrays) != expected or arrays["patch_embed.w"].shape != (P * P * 3, C) or \
                arrays["pos_embed"].shape != ((SIZE // P) ** 2, C):
            print(f"FAIL import: {len(arrays)} arrays (want {expected}), "
                  f"patch_embed.w {arrays['patch_embed.w'].shape}, pos_embed {arrays['pos_embed'].shape}")
            failures += 1
        else:
            print(f"PASS import: {len(arrays)} arrays, meta {meta['encoder']}")

        rgb = rng.integers(0, 256, size=(SIZE, SIZE, 3)).astype(np.float64)
        cv2.imwrite(str(tmp / "img.png"), rgb[:, :, ::-1].astype(np.uint8))
        token = 1
        subprocess.run([glstr, "attn-viz", "--config", "tiny", "--set", "model.normalization=vit", "--set",
                        f"train.init_checkpoint={tmp / 'vit.ckpt'}", "--image", str(tmp / "img.png"), "--layers",
                        "1,2,12", "--token", str(token), "--out", str(tmp / "attn")], check=True,
                       stdout=subprocess.DEVNULL)
        got = json.loads((tmp / "attn" / f"img_attn_t{token}.json").read_text())
        ref = reference_attention(sd, rgb)
        for layer in (1, 2, 12):
            diff = np.abs(np.asarray(got[str(layer)]["values"]) - ref[layer - 1][token]).max()
            ok = diff <= 1e-9
            failures += not ok
            print(f"{'PASS' if ok else 'FAIL'} attention layer {layer}: max diff {diff:.2e}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
