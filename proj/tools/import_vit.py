#!/usr/bin/env python3
"""Rename a timm-style ViT state dict into a GLSTR checkpoint.

The output holds only patch_embed.*, pos_embed and encoder.layer.* arrays.
Point train.init_checkpoint at it; the decoder keeps its random init.

    python3 tools/import_vit.py vit_base_patch16_384.npz -o vit_b16_384.ckpt
    glstr train --config reference --set train.init_checkpoint=vit_b16_384.ckpt \
        --set model.normalization=vit --data DUTS-TR

Accepted inputs: .npz (arrays under timm names), .safetensors, or a torch
.pth/.pt/.bin state dict. docs/checkpoint_format.md has the name table.
"""

import argparse
import json
import re
import struct
import sys
from pathlib import Path

import numpy as np

MAGIC = b"GLSTRCK1"
VERSION = 1


def load_state_dict(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            sd = {k: z[k] for k in z.files}
    elif path.suffix == ".safetensors":
        from safetensors.numpy import load_file

        sd = load_file(str(path))
    else:
        import torch

        obj = torch.load(str(path), map_location="cpu")
        for key in ("model", "state_dict"):
            if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
                obj = obj[key]
        sd = {k: v.detach().cpu().numpy() for k, v in obj.items() if hasattr(v, "detach")}
    return {re.sub(r"^(module\.|model\.)", "", k): np.asarray(v, dtype=np.float64) for k, v in sd.items()}


def resize_pos(pos, old_grid, new_grid):
    from scipy.ndimage import zoom

    c = pos.shape[1]
    grid = pos.reshape(old_grid, old_grid, c)
    f = new_grid / old_grid
    return zoom(grid, (f, f, 1), order=3).reshape(new_grid * new_grid, c)


def convert(sd, input_size=None):
    w = sd["patch_embed.proj.weight"]  # [C, 3, p, p]
    c, _, p, _ = w.shape
    out = [
        # serialize_image flattens a patch in (y, x, channel) order
        ("patch_embed.w", w.transpose(2, 3, 1, 0).reshape(p * p * 3, c)),
        ("patch_embed.b", sd["patch_embed.proj.bias"]),
    ]

    pos = sd["pos_embed"].reshape(-1, c)
    if "cls_token" in sd:
        pos = pos[1:]
    old_grid = int(round(len(pos) ** 0.5))
    if old_grid * old_grid != len(pos):
        raise ValueError(f"pos_embed has {len(pos)} patch rows, not a square grid")
    if input_size is not None and input_size // p != old_grid:
        pos = resize_pos(pos, old_grid, input_size // p)
    out.append(("pos_embed", pos))

    layers = sorted({int(m.group(1)) for k in sd for m in [re.match(r"blocks\.(\d+)\.", k)] if m})
    for i in layers:
        b = f"blocks.{i}."
        g = f"encoder.layer.{i}."
        qkv_w, qkv_b = sd[b + "attn.qkv.weight"], sd[b + "attn.qkv.bias"]
        out += [
            (g + "ln1.gamma", sd[b + "norm1.weight"]),
            (g + "ln1.beta", sd[b + "norm1.bias"]),
        ]
        for k, name in enumerate("qkv"):
            out.append((g + f"attn.w{name}", qkv_w[k * c:(k + 1) * c].T))
            out.append((g + f"attn.b{name}", qkv_b[k * c:(k + 1) * c]))
        out += [
            (g + "attn.proj.w", sd[b + "attn.proj.weight"].T),
            (g + "attn.proj.b", sd[b + "attn.proj.bias"]),
            (g + "ln2.gamma", sd[b + "norm2.weight"]),
            (g + "ln2.beta", sd[b + "norm2.bias"]),
            (g + "mlp.fc1.w", sd[b + "mlp.fc1.weight"].T),
            (g + "mlp.fc1.b", sd[b + "mlp.fc1.bias"]),
            (g + "mlp.fc2.w", sd[b + "mlp.fc2.weight"].T),
            (g + "mlp.fc2.b", sd[b + "mlp.fc2.bias"]),
        ]
    info = {
        "embed_dim": int(c),
        "patch_size": int(p),
        "num_layers": len(layers),
        "mlp_hidden": int(sd[f"blocks.{layers[0]}.mlp.fc1.weight"].shape[0]) if layers else 0,
        "grid": int(round(len(out[2][1]) ** 0.5)),
    }
    return out, info


def write_checkpoint(path, arrays, meta):
    blob = json.dumps(meta).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<Q", len(arrays)))
        for name, a in arrays:
            a = np.ascontiguousarray(a, dtype="<f8")
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)) + raw)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(a.tobytes())


def read_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path} is not a GLSTR checkpoint")
        _, n = struct.unpack("<IQ", f.read(12))
        meta = json.loads(f.read(n))
        (count,) = struct.unpack("<Q", f.read(8))
        arrays = {}
        for _ in range(count):
            (k,) = struct.unpack("<I", f.read(4))
            name = f.read(k).decode()
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
            arrays[name] = np.frombuffer(f.read(8 * int(np.prod(shape))), dtype="<f8").reshape(shape)
    return meta, arrays


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("weights")
    ap.add_argument("-o", "--output", required=True)
    ap.add_argument("--input-size", type=int, help="resize pos_embed to this input resolution")
    args = ap.parse_args(argv)
    try:
        arrays, info = convert(load_state_dict(args.weights), args.input_size)
    except KeyError as e:
        print(f"import_vit: missing array {e} (expected timm ViT names)", file=sys.stderr)
        return 2
    meta = {"format": "glstr-import", "source": str(Path(args.weights).resolve()), "encoder": info}
    write_checkpoint(args.output, arrays, meta)
    print(f"{args.output}: {len(arrays)} arrays, C={info['embed_dim']} patch={info['patch_size']} "
          f"layers={info['num_layers']} grid={info['grid']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
