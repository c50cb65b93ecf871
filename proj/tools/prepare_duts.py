#!/usr/bin/env python3
"""Arrange a DUTS split as dataset_root/{images,masks} by symlink or copy.

    python3 tools/prepare_duts.py ~/data/DUTS-TR data/duts-tr
    python3 tools/prepare_duts.py ~/data/DUTS-TE data/duts-te --copy

The split directory is expected to hold <split>-Image/ and <split>-Mask/
(the layout of the public archives); any directory pair ending in -Image and
-Mask is accepted. Images without a mask are reported and skipped.
"""

import argparse
import shutil
import sys
from pathlib import Path

IMAGE_EXT = {".jpg", ".jpeg", ".png", ".bmp"}


def find_pair(split):
    images = [d for d in split.iterdir() if d.is_dir() and d.name.lower().endswith("-image")]
    masks = [d for d in split.iterdir() if d.is_dir() and d.name.lower().endswith("-mask")]
    if len(images) != 1 or len(masks) != 1:
        raise SystemExit(f"prepare_duts: expected one *-Image and one *-Mask directory in {split}")
    return images[0], masks[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("split", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--copy", action="store_true", help="copy files instead of symlinking")
    args = ap.parse_args(argv)

    image_dir, mask_dir = find_pair(args.split)
    masks = {p.stem: p for p in mask_dir.iterdir() if p.suffix.lower() in IMAGE_EXT}
    for sub in ("images", "masks"):
        (args.out / sub).mkdir(parents=True, exist_ok=True)

    def place(src, dst):
        if dst.exists() or dst.is_symlink():
            dst.unlink()
        if args.copy:
            shutil.copy2(src, dst)
        else:
            dst.symlink_to(src.resolve())

    linked = missing = 0
    for img in sorted(image_dir.iterdir()):
        if img.suffix.lower() not in IMAGE_EXT:
            continue
        mask = masks.get(img.stem)
        if mask is None:
            print(f"warning: {img.name}: no mask", file=sys.stderr)
            missing += 1
            continue
        place(img, args.out / "images" / img.name)
        place(mask, args.out / "masks" / mask.name)
        linked += 1
    print(f"{args.out}: {linked} pairs ({'copied' if args.copy else 'linked'}), {missing} images without a mask")
    return 0 if linked else 1


if __name__ == "__main__":
    sys.exit(main())
