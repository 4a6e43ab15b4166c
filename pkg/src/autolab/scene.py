"""Virtual sample: a reflectance bitmap mapped onto stage coordinates.

The scene is what the probe "sees": the rack samples it at the live stage
position to drive the photoconductor's irradiance. Row 0 is the bottom edge
of the stage area (same orientation as scan row 0); PGM files store the top
row first, so load/save flip rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class SceneError(ValueError):
    pass


@dataclass
class Scene:
    pixels: list[list[float]]  # row-major, row 0 at the bottom, values in [0,1]
    origin_x: float = 0.0  # stage um of pixel (0,0) center
    origin_y: float = 0.0
    scale_x: float = 100.0  # um per pixel
    scale_y: float = 100.0
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.pixels or not self.pixels[0]:
            raise SceneError("scene must have at least one pixel")
        width = len(self.pixels[0])
        if any(len(row) != width for row in self.pixels):
            raise SceneError("scene rows must have equal length")
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise SceneError("scene scale must be > 0")
        self.pixels = [[min(1.0, max(0.0, float(v))) for v in row] for row in self.pixels]

    @property
    def width(self) -> int:
        return len(self.pixels[0])

    @property
    def height(self) -> int:
        return len(self.pixels)

    def sample(self, x_um: float, y_um: float) -> float:
        """Nearest-neighbor reflectance at a stage position; dark outside."""
        px = math.floor((x_um - self.origin_x) / self.scale_x + 0.5)
        py = math.floor((y_um - self.origin_y) / self.scale_y + 0.5)
        if 0 <= px < self.width and 0 <= py < self.height:
            return self.pixels[py][px]
        return 0.0


def load_scene_pgm(path: str, origin_x: float = 0.0, origin_y: float = 0.0,
                   scale_x: float = 100.0, scale_y: float = 100.0) -> Scene:
    """Load a P2 (plain) PGM as a scene, normalizing to [0,1]."""
    try:
        with open(path, "r", encoding="ascii") as handle:
            text = handle.read()
    except OSError as exc:
        raise SceneError(f"cannot read scene file {path}: {exc}") from exc
    tokens = []
    for raw_line in text.splitlines():
        line = raw_line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise SceneError(f"scene file {path} is not a plain PGM (P2)")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        values = [int(t) for t in tokens[4 : 4 + width * height]]
    except (IndexError, ValueError) as exc:
        raise SceneError(f"scene file {path} is malformed: {exc}") from exc
    if maxval <= 0 or width <= 0 or height <= 0:
        raise SceneError(f"scene file {path} has a bad header")
    if len(values) != width * height:
        raise SceneError(f"scene file {path} is truncated")
    rows_top_first = [
        [values[r * width + c] / maxval for c in range(width)] for r in range(height)
    ]
    return Scene(
        pixels=rows_top_first[::-1],
        origin_x=origin_x,
        origin_y=origin_y,
        scale_x=scale_x,
        scale_y=scale_y,
        source=path,
    )


# 16x16 block-letter "VL" logo, top row first as drawn.
_LOGO_ART = [
    "################",
    "#..............#",
    "#.##...##......#",
    "#.##...##......#",
    "#.##...##......#",
    "#..##.##.......#",
    "#..##.##.......#",
    "#...###..##....#",
    "#...###..##....#",
    "#........##....#",
    "#........##....#",
    "#........##....#",
    "#........#####.#",
    "#........#####.#",
    "#..............#",
    "################",
]


def make_logo_scene(width: int = 32, height: int = 32, scale_x: float = 100.0,
                    scale_y: float = 100.0) -> Scene:
    """Deterministic high-contrast test target (block 'VL' on dark ground)."""
    art_h = len(_LOGO_ART)
    art_w = len(_LOGO_ART[0])
    rows_bottom_first = _LOGO_ART[::-1]
    pixels = []
    for py in range(height):
        ay = min(art_h - 1, py * art_h // height)
        row = []
        for px in range(width):
            ax = min(art_w - 1, px * art_w // width)
            row.append(1.0 if rows_bottom_first[ay][ax] == "#" else 0.0)
        pixels.append(row)
    return Scene(pixels=pixels, scale_x=scale_x, scale_y=scale_y, source="builtin:logo")
