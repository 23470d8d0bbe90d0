"""Procedural multi-object scenes with condition-dependent segmentation masks.

Scenes are flat-shaded 2-D rasterizations: squares, circles and triangles
(bird's-eye silhouettes of cubes, spheres and prisms) in three colours and
three sizes on a mid-grey background.  The conditioning scenario picks which
objects form the ground-truth mask.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

SHAPES = ("square", "circle", "triangle")
COLOURS = ("yellow", "red", "green")
SIZES = ("small", "medium", "large")
QUADRANTS = ("TL", "TR", "BL", "BR")
SCENARIOS = ("quadrant", "colour", "shape", "size", "continuous-scale")

COLOUR_RGB = {"yellow": (1.0, 1.0, 0.0), "red": (1.0, 0.0, 0.0),
              "green": (0.0, 1.0, 0.0)}
SIZE_RADII_64 = {"small": 4.0, "medium": 7.0, "large": 10.0}
BACKGROUND = 0.5

# Continuous-scale scenario: centered target disk shrinking with t.
CONT_R_MAX_64 = 14.0
CONT_R_MIN_64 = 3.0


@dataclass
class SceneObject:
    shape: str
    colour: str
    size: str
    center: tuple          # (x, y) in pixels
    radius: float          # bounding-circle radius in pixels


@dataclass
class Sample:
    image: np.ndarray      # [3, H, W] float32 in [0, 1]
    condition: np.ndarray  # one-hot vector or scalar in [0, 1]
    mask: np.ndarray       # [H, W] uint8, 0 = background, 1 = target
    scenario: str
    condition_label: object = None
    objects: list = field(default_factory=list)


def condition_dim(scenario):
    return {"quadrant": 4, "colour": 3, "shape": 3, "size": 3,
            "continuous-scale": 1}[scenario]


def size_radius(size, canvas):
    return SIZE_RADII_64[size] * min(canvas) / 64.0


def rasterize_object(obj, canvas):
    """Boolean coverage mask of one object (exact, no anti-aliasing)."""
    H, W = canvas
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    cx, cy = obj.center
    r = obj.radius
    if obj.shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if obj.shape == "square":
        half = r / np.sqrt(2.0)
        return (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)
    # triangle: inscribed in the bounding circle, apex up, centroid at center
    v = [(cx, cy - r),
         (cx - r * np.sqrt(3.0) / 2.0, cy + r / 2.0),
         (cx + r * np.sqrt(3.0) / 2.0, cy + r / 2.0)]
    inside = np.ones((H, W), dtype=bool)
    for (x0, y0), (x1, y1) in zip(v, v[1:] + v[:1]):
        cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        # vertices wind clockwise in image coordinates (y grows downward)
        inside &= cross <= 0
    return inside


def render(objects, canvas):
    """Flat-shaded image [3, H, W] and per-object boolean masks."""
    H, W = canvas
    image = np.full((3, H, W), BACKGROUND, dtype=np.float32)
    masks = []
    for obj in objects:
        m = rasterize_object(obj, canvas)
        for ch, val in enumerate(COLOUR_RGB[obj.colour]):
            image[ch][m] = val
        masks.append(m)
    return image, masks


def quadrant_of(obj, canvas):
    """Quadrant containing the object's centre of mass."""
    H, W = canvas
    x, y = obj.center
    if y < H / 2.0:
        return "TL" if x < W / 2.0 else "TR"
    return "BL" if x < W / 2.0 else "BR"


def _place(rng, radius, canvas, placed, max_tries=200):
    H, W = canvas
    margin = radius + 1.0
    for _ in range(max_tries):
        cx = rng.uniform(margin, W - margin)
        cy = rng.uniform(margin, H - margin)
        # keep centroids off the quadrant midlines
        if abs(cx - W / 2.0) < 0.75 or abs(cy - H / 2.0) < 0.75:
            continue
        ok = True
        for other in placed:
            ox, oy = other.center
            if np.hypot(cx - ox, cy - oy) <= radius + other.radius + 2.0:
                ok = False
                break
        if ok:
            return cx, cy
    return None


def generate_scene(rng, canvas=(64, 64)):
    """3-5 non-overlapping objects covering every shape, colour and size.

    `rng` is a seed or a numpy Generator.  If placement fails (retry cap),
    the attempt is logged and a fresh scene is drawn from the same stream.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    while True:
        count = int(rng.integers(3, 6))
        shapes = list(rng.permutation(SHAPES)) + [
            str(s) for s in rng.choice(SHAPES, size=count - 3)]
        colours = list(rng.permutation(COLOURS)) + [
            str(c) for c in rng.choice(COLOURS, size=count - 3)]
        sizes = list(rng.permutation(SIZES)) + [
            str(c) for c in rng.choice(SIZES, size=count - 3)]
        objects = []
        failed = False
        for shape, colour, size in zip(shapes, colours, sizes):
            radius = size_radius(size, canvas)
            spot = _place(rng, radius, canvas, objects)
            if spot is None:
                failed = True
                break
            objects.append(SceneObject(str(shape), str(colour), str(size),
                                       spot, radius))
        if not failed:
            return objects
        logger.info("scene placement retry cap hit; regenerating")


def make_sample(scene, scenario, rng, canvas=(64, 64)):
    """Draw a condition uniformly, encode it one-hot, build image and mask."""
    if scenario not in SCENARIOS or scenario == "continuous-scale":
        raise ValueError(f"make_sample: invalid scenario {scenario!r}")
    image, masks = render(scene, canvas)
    if scenario == "quadrant":
        categories = QUADRANTS
        key = lambda obj: quadrant_of(obj, canvas)
    elif scenario == "colour":
        categories = COLOURS
        key = lambda obj: obj.colour
    elif scenario == "shape":
        categories = SHAPES
        key = lambda obj: obj.shape
    else:
        categories = SIZES
        key = lambda obj: obj.size
    label = categories[int(rng.integers(len(categories)))]
    condition = np.zeros(len(categories), dtype=np.float32)
    condition[categories.index(label)] = 1.0
    mask = np.zeros(canvas, dtype=np.uint8)
    for obj, m in zip(scene, masks):
        if key(obj) == label:
            mask[m] = 1
    return Sample(image=image, condition=condition, mask=mask,
                  scenario=scenario, condition_label=label,
                  objects=list(scene))


def generate_continuous_sample(rng, t, canvas=(64, 64)):
    """Centered target disk whose radius shrinks linearly with t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    H, W = canvas
    scale = min(canvas) / 64.0
    r_max, r_min = CONT_R_MAX_64 * scale, CONT_R_MIN_64 * scale
    radius = r_max - t * (r_max - r_min)
    target = SceneObject("circle", "red", "medium",
                         (W / 2.0 + 0.25, H / 2.0 + 0.25), radius)
    objects = [target]
    n_distract = int(rng.integers(2, 4))
    for _ in range(n_distract):
        shape = str(rng.choice(SHAPES))
        colour = str(rng.choice(COLOURS))
        size = str(rng.choice(SIZES))
        dr = size_radius(size, canvas)
        spot = _place(rng, dr, canvas, objects)
        if spot is None:
            continue
        objects.append(SceneObject(shape, colour, size, spot, dr))
    image, masks = render(objects, canvas)
    mask = masks[0].astype(np.uint8)
    return Sample(image=image, condition=np.array([t], dtype=np.float32),
                  mask=mask, scenario="continuous-scale", condition_label=float(t),
                  objects=objects)


@dataclass
class Dataset:
    scenario: str
    seed: int
    canvas: tuple
    splits: dict           # name -> list of Sample

    @property
    def condition_dim(self):
        return condition_dim(self.scenario)


def split_sizes(n):
    """72% / 8% / 20% train/val/test (the full-scale 2880/320/800 of 4000)."""
    n_train = int(round(n * 0.72))
    n_val = int(round(n * 0.08))
    return n_train, n_val, n - n_train - n_val


def build_dataset(n, scenario, seed, canvas=(64, 64)):
    """Deterministic dataset: per-sample RNG streams keyed by (seed, index)."""
    if n < 10:
        raise ValueError("need at least 10 samples to split")
    samples = []
    for idx in range(n):
        rng = np.random.default_rng([seed, idx])
        if scenario == "continuous-scale":
            t = float(rng.uniform(0.0, 1.0))
            samples.append(generate_continuous_sample(rng, t, canvas))
        else:
            scene = generate_scene(rng, canvas)
            samples.append(make_sample(scene, scenario, rng, canvas))
    n_train, n_val, n_test = split_sizes(n)
    splits = {"train": samples[:n_train],
              "val": samples[n_train:n_train + n_val],
              "test": samples[n_train + n_val:]}
    return Dataset(scenario=scenario, seed=seed, canvas=tuple(canvas), splits=splits)


def save_dataset(dataset, out_dir):
    """Write PNG images/masks per split plus a manifest.json."""
    out_dir = Path(out_dir)
    manifest = {"scenario": dataset.scenario, "seed": dataset.seed,
                "canvas": list(dataset.canvas), "splits": {}}
    empty = total = 0
    for split, samples in dataset.splits.items():
        img_dir = out_dir / split / "images"
        msk_dir = out_dir / split / "masks"
        img_dir.mkdir(parents=True, exist_ok=True)
        msk_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, s in enumerate(samples):
            name = f"{i:05d}.png"
            rgb = np.round(s.image.transpose(1, 2, 0) * 255).astype(np.uint8)
            Image.fromarray(rgb).save(img_dir / name)
            Image.fromarray(s.mask, mode="L").save(msk_dir / name)
            is_empty = not bool(s.mask.any())
            empty += is_empty
            total += 1
            entries.append({
                "file": name,
                "condition": [float(v) for v in s.condition],
                "condition_label": s.condition_label,
                "empty_mask": is_empty,
                "objects": [{"shape": o.shape, "colour": o.colour,
                             "size": o.size, "center": list(o.center),
                             "radius": o.radius} for o in s.objects],
            })
        manifest["splits"][split] = entries
    manifest["empty_mask_rate"] = empty / max(1, total)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(root):
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    splits = {}
    for split, entries in manifest["splits"].items():
        samples = []
        for entry in entries:
            rgb = np.asarray(Image.open(root / split / "images" / entry["file"]))
            mask = np.asarray(Image.open(root / split / "masks" / entry["file"]))
            samples.append(Sample(
                image=(rgb.astype(np.float32) / 255.0).transpose(2, 0, 1),
                condition=np.asarray(entry["condition"], dtype=np.float32),
                mask=mask.astype(np.uint8),
                scenario=manifest["scenario"],
                condition_label=entry["condition_label"],
            ))
        splits[split] = samples
    return Dataset(scenario=manifest["scenario"], seed=manifest["seed"],
                   canvas=tuple(manifest["canvas"]), splits=splits)
