"""Dataset construction: pair averaging, deterministic tiling, stitching.

Crop schemes (tile t, default 256):
  set1/set2/set3  - tile PPL and XPL independently at stride t, t/2, t/4
  set4/set5/set6  - tile the per-pixel average image at the same strides
  test1           - non-overlapping tiles of PPL and XPL, zero padding
  test2           - non-overlapping tiles of the average image, 255 padding

Padding is applied bottom/right only, to the smallest size that makes
(dim - tile) divisible by the stride. Image tiles pad with the scheme's
pad value, mask tiles always pad with background.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

MASK_THRESHOLD = 128

SCHEMES = ("set1", "set2", "set3", "set4", "set5", "set6", "test1", "test2")
_AVERAGED = {"set4", "set5", "set6", "test2"}
_STRIDE_DIV = {"set1": 1, "set2": 2, "set3": 4, "set4": 1, "set5": 2,
               "set6": 4, "test1": 1, "test2": 1}


@dataclass
class ImagePair:
    id: str
    ppl: np.ndarray                 # H x W x 3 uint8
    xpl: np.ndarray                 # H x W x 3 uint8
    mask: np.ndarray | None = None  # H x W uint8 grayscale

    def __post_init__(self):
        if self.ppl.shape[:2] != self.xpl.shape[:2]:
            raise ValueError(
                f"pair {self.id}: ppl {self.ppl.shape[:2]} vs xpl {self.xpl.shape[:2]}")
        if self.mask is not None and self.mask.shape[:2] != self.ppl.shape[:2]:
            raise ValueError(
                f"pair {self.id}: mask {self.mask.shape[:2]} vs image {self.ppl.shape[:2]}")


@dataclass
class TilePlan:
    tile: int
    stride: int
    pad_value: int
    padded_h: int
    padded_w: int
    origins: list = field(default_factory=list)  # (row, col) in the padded frame


@dataclass
class Sample:
    image: np.ndarray   # 3 x t x t float32 in [0, 1]
    mask: np.ndarray    # 1 x t x t float32 binary
    source_id: str
    origin: tuple


def average_pair(pair: ImagePair) -> np.ndarray:
    # floor integer mean keeps the result bit-identical across platforms
    return ((pair.ppl.astype(np.uint16) + pair.xpl.astype(np.uint16)) // 2).astype(np.uint8)


def binarize_mask(gray: np.ndarray) -> np.ndarray:
    return (np.asarray(gray) >= MASK_THRESHOLD).astype(np.uint8)


def _pad_to(extent, tile, stride):
    if extent <= tile:
        return tile
    over = (extent - tile) % stride
    return extent if over == 0 else extent + (stride - over)


def tile_plan(h: int, w: int, tile: int, stride: int, pad_value: int = 0) -> TilePlan:
    if tile <= 0:
        raise ValueError("tile must be positive")
    if stride <= 0 or stride > tile:
        raise ValueError(f"stride must be in (0, tile], got {stride}")
    padded_h = _pad_to(h, tile, stride)
    padded_w = _pad_to(w, tile, stride)
    origins = [(r, c)
               for r in range(0, padded_h - tile + 1, stride)
               for c in range(0, padded_w - tile + 1, stride)]
    return TilePlan(tile=tile, stride=stride, pad_value=pad_value,
                    padded_h=padded_h, padded_w=padded_w, origins=origins)


def extract_tiles(image: np.ndarray, mask: np.ndarray | None,
                  plan: TilePlan, source_id: str = "") -> list:
    h, w = image.shape[:2]
    t = plan.tile
    padded = np.full((plan.padded_h, plan.padded_w, 3), plan.pad_value, np.uint8)
    padded[:h, :w] = image
    if mask is not None:
        padded_mask = np.zeros((plan.padded_h, plan.padded_w), np.uint8)
        padded_mask[:h, :w] = mask
    samples = []
    for (r, c) in plan.origins:
        img = padded[r:r + t, c:c + t]
        img = (img.astype(np.float32) / 255.0).transpose(2, 0, 1)
        if mask is not None:
            m = padded_mask[r:r + t, c:c + t].astype(np.float32)[None]
        else:
            m = np.zeros((1, t, t), np.float32)
        samples.append(Sample(image=img, mask=m, source_id=source_id, origin=(r, c)))
    return samples


def scheme_images(pair: ImagePair, scheme: str):
    """(image_id, HxWx3 array) views a scheme derives from one pair."""
    if scheme in _AVERAGED:
        return [(pair.id, average_pair(pair))]
    return [(f"{pair.id}_ppl", pair.ppl), (f"{pair.id}_xpl", pair.xpl)]


def scheme_plan(scheme: str, h: int, w: int, tile: int) -> TilePlan:
    stride = tile // _STRIDE_DIV[scheme]
    pad_value = 255 if scheme == "test2" else 0
    return tile_plan(h, w, tile, stride, pad_value)


def build_dataset(pairs, scheme: str, tile: int = 256) -> list:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no image pairs given")
    samples = []
    for pair in pairs:
        mask = binarize_mask(pair.mask) if pair.mask is not None else None
        for img_id, image in scheme_images(pair, scheme):
            plan = scheme_plan(scheme, image.shape[0], image.shape[1], tile)
            samples.extend(extract_tiles(image, mask, plan, img_id))
    return samples


def stitch(tiles, plan: TilePlan, out_h: int, out_w: int) -> np.ndarray:
    tiles = list(tiles)
    if len(tiles) != len(plan.origins):
        raise ValueError(
            f"expected {len(plan.origins)} tiles for this plan, got {len(tiles)}")
    t = plan.tile
    acc = np.zeros((plan.padded_h, plan.padded_w), np.float64)
    cover = np.zeros((plan.padded_h, plan.padded_w), np.float64)
    for (r, c), tile_map in zip(plan.origins, tiles):
        acc[r:r + t, c:c + t] += np.asarray(tile_map, np.float64)
        cover[r:r + t, c:c + t] += 1.0
    return (acc / cover)[:out_h, :out_w].astype(np.float32)


# --- PNG directory layout: <id>_ppl.png, <id>_xpl.png, <id>_mask.png ---

def read_rgb(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def read_gray(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"))


def write_rgb(path, arr):
    Image.fromarray(np.asarray(arr, np.uint8), mode="RGB").save(path, format="PNG")


def write_gray(path, arr):
    Image.fromarray(np.asarray(arr, np.uint8), mode="L").save(path, format="PNG")


def pair_ids(input_dir):
    ids = set()
    for name in os.listdir(input_dir):
        for suffix in ("_ppl.png", "_xpl.png", "_mask.png"):
            if name.endswith(suffix):
                ids.add(name[:-len(suffix)])
    return sorted(ids)


def load_pairs(input_dir, require_mask: bool = True) -> list:
    ids = pair_ids(input_dir)
    if not ids:
        raise FileNotFoundError(f"no <id>_ppl/_xpl/_mask PNG triples in {input_dir}")
    pairs = []
    for pid in ids:
        paths = {kind: os.path.join(input_dir, f"{pid}_{kind}.png")
                 for kind in ("ppl", "xpl", "mask")}
        for kind in ("ppl", "xpl") + (("mask",) if require_mask else ()):
            if not os.path.exists(paths[kind]):
                raise FileNotFoundError(
                    f"incomplete triple for id {pid!r}: missing {pid}_{kind}.png")
        mask = read_gray(paths["mask"]) if os.path.exists(paths["mask"]) else None
        pairs.append(ImagePair(id=pid, ppl=read_rgb(paths["ppl"]),
                               xpl=read_rgb(paths["xpl"]), mask=mask))
    return pairs


def save_pair(output_dir, pair: ImagePair):
    write_rgb(os.path.join(output_dir, f"{pair.id}_ppl.png"), pair.ppl)
    write_rgb(os.path.join(output_dir, f"{pair.id}_xpl.png"), pair.xpl)
    if pair.mask is not None:
        write_gray(os.path.join(output_dir, f"{pair.id}_mask.png"), pair.mask)


def save_prepared(samples, scheme: str, tile: int, output_dir) -> str:
    """Persist tiles as PNGs plus a manifest; returns the manifest path."""
    tiles_dir = os.path.join(output_dir, "tiles")
    os.makedirs(tiles_dir, exist_ok=True)
    manifest = {"scheme": scheme, "tile": tile, "samples": []}
    for i, s in enumerate(samples):
        img_name = f"tile_{i:06d}_img.png"
        mask_name = f"tile_{i:06d}_mask.png"
        img_u8 = np.clip(np.round(s.image * 255.0), 0, 255).astype(np.uint8)
        write_rgb(os.path.join(tiles_dir, img_name), img_u8.transpose(1, 2, 0))
        write_gray(os.path.join(tiles_dir, mask_name),
                   (s.mask[0] > 0).astype(np.uint8) * 255)
        manifest["samples"].append({
            "source": s.source_id,
            "origin": list(s.origin),
            "image": os.path.join("tiles", img_name),
            "mask": os.path.join("tiles", mask_name),
        })
    manifest_path = os.path.join(output_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest_path


def load_prepared(manifest_path) -> tuple:
    """Returns (samples, manifest dict)."""
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    root = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for entry in manifest["samples"]:
        img = read_rgb(os.path.join(root, entry["image"]))
        mask = read_gray(os.path.join(root, entry["mask"]))
        samples.append(Sample(
            image=(img.astype(np.float32) / 255.0).transpose(2, 0, 1),
            mask=binarize_mask(mask).astype(np.float32)[None],
            source_id=entry["source"],
            origin=tuple(entry["origin"])))
    return samples, manifest
