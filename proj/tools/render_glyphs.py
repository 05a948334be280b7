#!/usr/bin/env python3
"""Rasterize characters with a TrueType/OpenType font into a GLY1 atlas.

GLY1 layout: b"GLY1", u32 LE count, then per record a u32 LE codepoint and
1024 grayscale bytes (32x32, row-major, 255 = ink).

Characters come from --chars (a string), --from-file (every distinct
non-whitespace character of a UTF-8 text or TSV file, first column only for
.tsv) or both. Characters the font has no outline for are skipped with a
warning unless --keep-missing is given.

    python3 tools/render_glyphs.py --font NotoSansCJK-Regular.ttc \
        --from-file data/toy/pinyin.tsv --out glyphs.gly1
"""
import argparse
import struct
import sys
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

SIDE = 32


def collect_chars(args):
    seen = []
    if args.chars:
        seen.extend(args.chars)
    for path in args.from_file or []:
        text = Path(path).read_text(encoding="utf-8")
        if path.endswith(".tsv"):
            text = "".join(line.split("\t", 1)[0] for line in text.splitlines()
                           if line and not line.startswith("#"))
        seen.extend(text)
    out, have = [], set()
    for ch in seen:
        if ch.isspace() or ch in have:
            continue
        have.add(ch)
        out.append(ch)
    return out


def has_outline(font, ch):
    # Fonts render a .notdef box for missing glyphs; compare against a
    # codepoint that is never assigned.
    probe = font.getmask(ch)
    missing = font.getmask("\U0010FFFD")
    return probe.size != (0, 0) and bytes(probe) != bytes(missing)


def render(font, ch, size):
    img = Image.new("L", (SIDE, SIDE), 0)
    draw = ImageDraw.Draw(img)
    left, top, right, bottom = draw.textbbox((0, 0), ch, font=font)
    w, h = right - left, bottom - top
    x = (SIDE - w) / 2 - left
    y = (SIDE - h) / 2 - top
    draw.text((x, y), ch, fill=255, font=font)
    return img.tobytes()


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--font", required=True)
    ap.add_argument("--chars", default="")
    ap.add_argument("--from-file", action="append")
    ap.add_argument("--size", type=int, default=28, help="font size in pixels")
    ap.add_argument("--index", type=int, default=0, help="face index inside a .ttc collection")
    ap.add_argument("--keep-missing", action="store_true")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    font = ImageFont.truetype(args.font, args.size, index=args.index)
    records = []
    for ch in collect_chars(args):
        if not args.keep_missing and not has_outline(font, ch):
            print(f"warning: no outline for U+{ord(ch):04X}, skipped", file=sys.stderr)
            continue
        records.append((ord(ch), render(font, ch, args.size)))

    with open(args.out, "wb") as f:
        f.write(b"GLY1")
        f.write(struct.pack("<I", len(records)))
        for cp, pixels in records:
            assert len(pixels) == SIDE * SIDE
            f.write(struct.pack("<I", cp))
            f.write(pixels)
    print(f"wrote {len(records)} glyphs to {args.out}")


if __name__ == "__main__":
    main()
