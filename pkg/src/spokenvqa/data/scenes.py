"""Seeded synthetic scenes of coloured shapes with exact bounding boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("circle", "square", "triangle")

# name -> RGB in 0..255; white is reserved for the background
PALETTE = {
    "red": (220, 30, 30),
    "green": (30, 160, 60),
    "blue": (30, 70, 220),
    "yellow": (240, 210, 20),
    "purple": (140, 50, 170),
    "orange": (250, 130, 20),
    "cyan": (20, 200, 210),
    "black": (20, 20, 20),
}
COLORS = tuple(PALETTE)

MIN_SHAPES, MAX_SHAPES = 2, 6


@dataclass(frozen=True)
class BBox:
    """Pixel box; x2/y2 are exclusive edges so width is x2 - x1."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def to_text(self) -> str:
        return "{%d, %d, %d, %d}" % self.as_tuple()

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x1 < self.x2 <= width and 0 <= self.y1 < self.y2 <= height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class Shape:
    kind: str
    color: str
    bbox: BBox
    z: int = 0

    @property
    def name(self) -> str:
        return f"{self.color} {self.kind}"


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    shapes: tuple[Shape, ...]
    target: int

    def __post_init__(self):
        if not 0 <= self.target < len(self.shapes):
            raise ValueError(f"target index {self.target} out of range")
        for s in self.shapes:
            if s.kind not in KINDS or s.color not in PALETTE:
                raise ValueError(f"unknown shape {s.kind!r}/{s.color!r}")
            if not s.bbox.within(self.width, self.height):
                raise ValueError(f"{s.name} bbox {s.bbox.as_tuple()} leaves the canvas")
        keys = [(s.kind, s.color) for s in self.shapes]
        if len(set(keys)) != len(keys):
            raise ValueError("two shapes share kind and colour; referring expressions would be ambiguous")

    @property
    def target_shape(self) -> Shape:
        return self.shapes[self.target]

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "target": self.target,
            "shapes": [
                {"kind": s.kind, "color": s.color, "bbox": list(s.bbox.as_tuple()), "z": s.z}
                for s in self.shapes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        shapes = tuple(Shape(s["kind"], s["color"], BBox(*s["bbox"]), s["z"]) for s in d["shapes"])
        return cls(d["width"], d["height"], shapes, d["target"])


def _overlaps(a: BBox, b: BBox, gap: int) -> bool:
    return not (a.x2 + gap <= b.x1 or b.x2 + gap <= a.x1 or a.y2 + gap <= b.y1 or b.y2 + gap <= a.y1)


def synth_scene(seed: int, n_shapes: int, width: int = 320, height: int = 240,
                min_size: int = 28, max_size: int = 72) -> SceneSpec:
    """Place ``n_shapes`` non-overlapping shapes with distinct (kind, colour) pairs."""
    if not MIN_SHAPES <= n_shapes <= MAX_SHAPES:
        raise ValueError(f"n_shapes must be in [{MIN_SHAPES}, {MAX_SHAPES}], got {n_shapes}")
    if max_size >= min(width, height):
        raise ValueError("canvas too small for the shape size range")
    rng = np.random.default_rng(seed)
    pairs = [(k, c) for k in KINDS for c in COLORS]
    chosen = rng.choice(len(pairs), size=n_shapes, replace=False)
    shapes: list[Shape] = []
    for z, idx in enumerate(chosen):
        kind, color = pairs[idx]
        for _ in range(1000):
            size = int(rng.integers(min_size, max_size + 1))
            x1 = int(rng.integers(0, width - size + 1))
            y1 = int(rng.integers(0, height - size + 1))
            box = BBox(x1, y1, x1 + size, y1 + size)
            if not any(_overlaps(box, s.bbox, 4) for s in shapes):
                break
        else:
            raise RuntimeError(f"could not place {n_shapes} shapes on a {width}x{height} canvas")
        shapes.append(Shape(kind, color, box, z))
    target = int(rng.integers(0, n_shapes))
    return SceneSpec(width, height, tuple(shapes), target)


def shape_mask(shape: Shape, width: int, height: int) -> np.ndarray:
    """Boolean (H, W) mask of pixels whose centres fall inside the shape."""
    b = shape.bbox
    ys, xs = np.mgrid[0:height, 0:width]
    px, py = xs + 0.5, ys + 0.5
    inside_box = (px >= b.x1) & (px < b.x2) & (py >= b.y1) & (py < b.y2)
    if shape.kind == "square":
        return inside_box
    w, h = b.x2 - b.x1, b.y2 - b.y1
    cx, cy = b.center
    if shape.kind == "circle":
        return inside_box & (((px - cx) / (w / 2)) ** 2 + ((py - cy) / (h / 2)) ** 2 <= 1.0)
    # upward triangle: apex at top-centre, base along the bottom edge
    rel = (py - b.y1) / h
    return inside_box & (np.abs(px - cx) <= rel * w / 2)


def render_scene(spec: SceneSpec) -> np.ndarray:
    """(H, W, 3) float32 image in [0, 1], shapes painted in ascending z."""
    img = np.full((spec.height, spec.width, 3), 255, dtype=np.uint8)
    for shape in sorted(spec.shapes, key=lambda s: s.z):
        img[shape_mask(shape, spec.width, spec.height)] = PALETTE[shape.color]
    return img.astype(np.float32) / 255.0
